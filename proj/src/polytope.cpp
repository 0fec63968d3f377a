#include "lbmpc/polytope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lbmpc {

HPolytope::HPolytope(Matrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != b_.size()) throw PolytopeError("HPolytope: row count of A and size of b differ");
  if (a_.rows() < 1) throw PolytopeError("HPolytope: at least one constraint required");
  require_finite(a_, "HPolytope A");
  require_finite(b_, "HPolytope b");
}

HPolytope HPolytope::box(const Vector& lo, const Vector& hi) {
  if (lo.size() != hi.size()) throw PolytopeError("box: corner dimensions differ");
  const Eigen::Index d = lo.size();
  Matrix a(2 * d, d);
  a << Matrix::Identity(d, d), -Matrix::Identity(d, d);
  Vector b(2 * d);
  b << hi, -lo;
  return {a, b};
}

HPolytope HPolytope::centered_box(const Vector& half_width) { return box(-half_width, half_width); }

bool HPolytope::has_infeasible_row() const {
  for (Eigen::Index i = 0; i < rows(); ++i) {
    if (a_.row(i).cwiseAbs().maxCoeff() == 0.0 && b_(i) < 0.0) return true;
  }
  return false;
}

HPolytope HPolytope::normalized() const {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < rows(); ++i) {
    if (a_.row(i).norm() > 0.0 || b_(i) < 0.0) keep.push_back(i);
  }
  if (keep.empty()) keep.push_back(0);
  Matrix a(static_cast<Eigen::Index>(keep.size()), dim());
  Vector b(a.rows());
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    const Eigen::Index i = keep[static_cast<std::size_t>(k)];
    const double nrm = a_.row(i).norm();
    const double s = nrm > 0.0 ? 1.0 / nrm : 1.0;
    a.row(k) = a_.row(i) * s;
    b(k) = b_(i) * s;
  }
  return {a, b};
}

HPolytope HPolytope::without_row(Eigen::Index index) const {
  if (rows() < 2) throw PolytopeError("without_row: polytope would have no rows");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < rows(); ++i) {
    if (i != index) keep.push_back(i);
  }
  return select_rows(keep);
}

HPolytope HPolytope::select_rows(const std::vector<Eigen::Index>& keep) const {
  Matrix a(static_cast<Eigen::Index>(keep.size()), dim());
  Vector b(a.rows());
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    a.row(k) = a_.row(keep[static_cast<std::size_t>(k)]);
    b(k) = b_(keep[static_cast<std::size_t>(k)]);
  }
  return {a, b};
}

HPolytope HPolytope::intersect(const HPolytope& other) const {
  if (other.dim() != dim()) throw PolytopeError("intersect: dimension mismatch");
  Matrix a(rows() + other.rows(), dim());
  a << a_, other.a_;
  Vector b(a.rows());
  b << b_, other.b_;
  return {a, b};
}

std::optional<std::pair<Vector, Vector>> HPolytope::as_box() const {
  const double inf = std::numeric_limits<double>::infinity();
  Vector lo = Vector::Constant(dim(), -inf);
  Vector hi = Vector::Constant(dim(), inf);
  for (Eigen::Index i = 0; i < rows(); ++i) {
    Eigen::Index nz = -1;
    for (Eigen::Index j = 0; j < dim(); ++j) {
      if (a_(i, j) != 0.0) {
        if (nz >= 0) return std::nullopt;
        nz = j;
      }
    }
    if (nz < 0) return std::nullopt;
    if (a_(i, nz) == 1.0) {
      hi(nz) = std::min(hi(nz), b_(i));
    } else if (a_(i, nz) == -1.0) {
      lo(nz) = std::max(lo(nz), -b_(i));
    } else {
      return std::nullopt;
    }
  }
  if (!lo.allFinite() || !hi.allFinite()) return std::nullopt;
  return std::make_pair(lo, hi);
}

const char* to_string(LPStatus s) {
  switch (s) {
    case LPStatus::Optimal: return "Optimal";
    case LPStatus::Infeasible: return "Infeasible";
    case LPStatus::Unbounded: return "Unbounded";
  }
  return "?";
}

namespace {

constexpr double kFeasibilityTol = 1e-9;

struct Normalized {
  Matrix a;
  Vector b;
  bool trivially_infeasible = false;
};

Normalized normalize_rows(const HPolytope& p) {
  Normalized out;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double nrm = p.A().row(i).norm();
    if (nrm == 0.0) {
      if (p.b()(i) < -kFeasibilityTol) out.trivially_infeasible = true;
      continue;
    }
    keep.push_back(i);
  }
  out.a.resize(static_cast<Eigen::Index>(keep.size()), p.dim());
  out.b.resize(out.a.rows());
  for (Eigen::Index k = 0; k < out.a.rows(); ++k) {
    const Eigen::Index i = keep[static_cast<std::size_t>(k)];
    const double nrm = p.A().row(i).norm();
    out.a.row(k) = p.A().row(i) / nrm;
    out.b(k) = p.b()(i) / nrm;
  }
  return out;
}

bool independent_of(const Matrix& a, const std::vector<Eigen::Index>& work, Eigen::Index row) {
  Matrix m(a.cols(), static_cast<Eigen::Index>(work.size()) + 1);
  for (std::size_t k = 0; k < work.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = a.row(work[k]).transpose();
  m.col(m.cols() - 1) = a.row(row).transpose();
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  qr.setThreshold(1e-10);
  return qr.rank() == m.cols();
}

// Active-set (vertex-following) simplex for  max c'x  s.t.  a x <= b, started
// from a feasible x. Rows must be unit norm. Each iteration refactors the
// working-set matrix, so no tableau error accumulates. After a degenerate step
// both the dropping and the adding rule switch to lowest-index (Bland) until
// the objective strictly improves.
LPStatus active_set_lp(const Matrix& a, const Vector& b, const Vector& c, Vector& x, int& iterations) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  const double cnorm = c.norm();
  if (cnorm == 0.0) return LPStatus::Optimal;

  std::vector<Eigen::Index> work;
  std::vector<char> in_work(static_cast<std::size_t>(m), 0);
  {
    const Vector slack = b - a * x;
    for (Eigen::Index i = 0; i < m && static_cast<Eigen::Index>(work.size()) < n; ++i) {
      if (slack(i) <= 1e-12 && independent_of(a, work, i)) {
        work.push_back(i);
        in_work[static_cast<std::size_t>(i)] = 1;
      }
    }
  }

  const int limit = 20 * static_cast<int>(m + n) + 1000;
  bool bland = false;
  for (int it = 0; it < limit; ++it) {
    const auto k = static_cast<Eigen::Index>(work.size());
    Vector d;
    Eigen::HouseholderQR<Matrix> qr;
    if (k == 0) {
      d = c;
    } else {
      Matrix awt(n, k);
      for (Eigen::Index j = 0; j < k; ++j) awt.col(j) = a.row(work[static_cast<std::size_t>(j)]).transpose();
      qr.compute(awt);
      const Matrix q = qr.householderQ();
      const Matrix z = q.rightCols(n - k);
      d = z * (z.transpose() * c);
    }

    if (d.norm() > 1e-12 * cnorm) {
      const Vector ad = a * d;
      const double dn = d.norm();
      Eigen::Index enter = -1;
      double ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m; ++i) {
        if (in_work[static_cast<std::size_t>(i)] || ad(i) <= 1e-12 * dn) continue;
        const double q = std::max(b(i) - a.row(i).dot(x), 0.0) / ad(i);
        const double eps = 1e-12 * (1.0 + std::abs(ratio));
        if (enter < 0 || q < ratio - eps) {
          enter = i;
          ratio = q;
        } else if (q <= ratio + eps && !bland && ad(i) > ad(enter)) {
          enter = i;
          ratio = std::min(ratio, q);
        }
      }
      if (enter < 0) return LPStatus::Unbounded;
      x += ratio * d;
      work.push_back(enter);
      in_work[static_cast<std::size_t>(enter)] = 1;
      bland = ratio * dn <= 1e-13;
      ++iterations;
      continue;
    }

    if (k == 0) return LPStatus::Optimal;
    const Vector qtc = qr.householderQ().transpose() * c;
    const Vector lambda =
        qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(qtc.head(k));
    Eigen::Index drop = -1;
    const double tol = -1e-11 * std::max(1.0, cnorm);
    for (Eigen::Index j = 0; j < k; ++j) {
      if (lambda(j) >= tol) continue;
      if (drop < 0) {
        drop = j;
      } else if (bland ? work[static_cast<std::size_t>(j)] < work[static_cast<std::size_t>(drop)]
                       : lambda(j) < lambda(drop)) {
        drop = j;
      }
    }
    if (drop < 0) return LPStatus::Optimal;
    in_work[static_cast<std::size_t>(work[static_cast<std::size_t>(drop)])] = 0;
    work.erase(work.begin() + drop);
    ++iterations;
  }
  throw PolytopeError("solve_lp: simplex iteration limit exceeded");
}

// Minimizes the largest violation t of the unit-norm rows over x, with
// t >= -1, starting from x0. Returns (t*, x*).
std::pair<double, Vector> phase_one(const Matrix& a, const Vector& b, const Vector& x0, int& iterations) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  Matrix aug = Matrix::Zero(m + 1, n + 1);
  aug.topLeftCorner(m, n) = a;
  aug.col(n).head(m).setConstant(-1.0);
  aug(m, n) = -1.0;
  Vector baug(m + 1);
  baug << b, 1.0;
  const Vector norms = aug.rowwise().norm();
  for (Eigen::Index i = 0; i <= m; ++i) {
    aug.row(i) /= norms(i);
    baug(i) /= norms(i);
  }
  Vector z(n + 1);
  z.head(n) = x0;
  z(n) = std::max((a * x0 - b).maxCoeff(), -1.0);
  Vector c = Vector::Zero(n + 1);
  c(n) = -1.0;
  if (active_set_lp(aug, baug, c, z, iterations) != LPStatus::Optimal) {
    throw PolytopeError("solve_lp: phase-one problem unexpectedly unbounded");
  }
  return {z(n), z.head(n)};
}

}  // namespace

LPResult solve_lp(const Vector& cost, const HPolytope& region, Sense sense, const LPOptions& options) {
  if (cost.size() != region.dim()) throw PolytopeError("solve_lp: cost dimension mismatch");
  require_finite(cost, "solve_lp cost");
  LPResult result;
  const Normalized p = normalize_rows(region);
  if (p.trivially_infeasible) {
    result.status = LPStatus::Infeasible;
    return result;
  }
  const Vector c = sense == Sense::Maximize ? cost : Vector(-cost);
  const Eigen::Index n = region.dim();

  if (p.a.rows() == 0) {
    result.point = Vector::Zero(n);
    result.status = c.cwiseAbs().maxCoeff() > 0.0 ? LPStatus::Unbounded : LPStatus::Optimal;
    return result;
  }

  Vector x;
  if (options.start && options.start->size() == n && (p.a * *options.start - p.b).maxCoeff() <= kFeasibilityTol) {
    x = *options.start;
  } else {
    const Vector x0 = options.start && options.start->size() == n ? *options.start : Vector::Zero(n);
    const auto [viol, xf] = phase_one(p.a, p.b, x0, result.iterations);
    if (viol > kFeasibilityTol) {
      result.status = LPStatus::Infeasible;
      return result;
    }
    x = xf;
  }
  result.status = active_set_lp(p.a, p.b, c, x, result.iterations);
  result.point = x;
  result.value = cost.dot(x);
  return result;
}

double support(const HPolytope& s, const Vector& a) {
  if (a.size() != s.dim()) throw PolytopeError("support: direction dimension mismatch");
  if (const auto bx = s.as_box()) {
    const auto& [lo, hi] = *bx;
    if ((lo.array() > hi.array()).any()) throw PolytopeError("support: empty set");
    return (a.array() * hi.array()).max(a.array() * lo.array()).sum();
  }
  const LPResult r = solve_lp(a, s, Sense::Maximize);
  switch (r.status) {
    case LPStatus::Optimal: return r.value;
    case LPStatus::Unbounded: return std::numeric_limits<double>::infinity();
    case LPStatus::Infeasible: break;
  }
  throw PolytopeError("support: empty set");
}

HPolytope tighten(const HPolytope& s, const Vector& offsets) {
  if (offsets.size() != s.rows()) throw PolytopeError("tighten: offsets length must equal row count");
  return {s.A(), s.b() - offsets};
}

double max_violation(const HPolytope& s, const Vector& x) {
  if (x.size() != s.dim()) throw PolytopeError("contains: dimension mismatch");
  return (s.A() * x - s.b()).maxCoeff();
}

bool contains(const HPolytope& s, const Vector& x, double tol) { return max_violation(s, x) <= tol; }

std::optional<Vector> feasible_point(const HPolytope& s) {
  const Normalized p = normalize_rows(s);
  if (p.trivially_infeasible) return std::nullopt;
  if (p.a.rows() == 0) return Vector::Zero(s.dim());
  int iterations = 0;
  const auto [viol, x] = phase_one(p.a, p.b, Vector::Zero(s.dim()), iterations);
  if (viol > kFeasibilityTol) return std::nullopt;
  return x;
}

bool is_empty(const HPolytope& s) { return !feasible_point(s).has_value(); }

bool is_redundant(const HPolytope& s, Eigen::Index row_index, double slack, const Vector* feasible) {
  if (row_index < 0 || row_index >= s.rows()) throw PolytopeError("is_redundant: row index out of range");
  if (s.rows() == 1) return s.A().row(0).norm() == 0.0 && s.b()(0) >= 0.0;
  const HPolytope rest = s.without_row(row_index);
  LPOptions opt;
  if (feasible) opt.start = *feasible;
  const LPResult r = solve_lp(s.A().row(row_index).transpose(), rest, Sense::Maximize, opt);
  if (r.status != LPStatus::Optimal) return false;
  return r.value <= s.b()(row_index) + slack;
}

HPolytope remove_redundant(const HPolytope& s, double slack) {
  HPolytope current = s;
  const std::optional<Vector> inside = feasible_point(s);
  for (Eigen::Index i = current.rows() - 1; i >= 0 && current.rows() > 1; --i) {
    if (is_redundant(current, i, slack, inside ? &*inside : nullptr)) current = current.without_row(i);
  }
  return current;
}

ChebyshevBall chebyshev_center(const HPolytope& s) {
  const Eigen::Index d = s.dim();
  Matrix a(s.rows() + 1, d + 1);
  a.topLeftCorner(s.rows(), d) = s.A();
  a.col(d).head(s.rows()) = s.A().rowwise().norm();
  a.row(s.rows()).setZero();
  a(s.rows(), d) = -1.0;
  Vector b(s.rows() + 1);
  b << s.b(), 0.0;
  Vector c = Vector::Zero(d + 1);
  c(d) = 1.0;
  const LPResult r = solve_lp(c, HPolytope(a, b), Sense::Maximize);
  if (r.status == LPStatus::Infeasible) throw PolytopeError("chebyshev_center: empty set");
  if (r.status == LPStatus::Unbounded) throw PolytopeError("chebyshev_center: unbounded set");
  return {r.point.head(d), r.point(d)};
}

void to_json(nlohmann::json& j, const HPolytope& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < p.dim(); ++k) row.push_back(p.A()(i, k));
    rows.push_back(row);
  }
  nlohmann::json b = nlohmann::json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) b.push_back(p.b()(i));
  j = nlohmann::json{{"A", rows}, {"b", b}};
}

void from_json(const nlohmann::json& j, HPolytope& p) {
  const auto& rows = j.at("A");
  const auto& bj = j.at("b");
  if (!rows.is_array() || rows.empty()) throw PolytopeError("HPolytope JSON: A must be a nonempty array");
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.at(0).size());
  if (static_cast<Eigen::Index>(bj.size()) != m) throw PolytopeError("HPolytope JSON: size of b differs from rows of A");
  Matrix a(m, d);
  Vector b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& row = rows.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != d) throw PolytopeError("HPolytope JSON: ragged A");
    for (Eigen::Index k = 0; k < d; ++k) a(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    b(i) = bj.at(static_cast<std::size_t>(i)).get<double>();
  }
  p = HPolytope(a, b);
}

}  // namespace lbmpc
