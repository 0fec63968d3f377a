#include "lbmpc/invariant.hpp"

#include <cmath>
#include <random>

namespace lbmpc {

SteadyStateMap steady_state_map(const Matrix& a, const Matrix& b) {
  const Eigen::Index p = a.rows();
  const Eigen::Index m = b.cols();
  if (a.cols() != p || b.rows() != p) throw InvariantError(InvariantErrorKind::BadSteadyState, "steady_state_map: dimension mismatch");
  Matrix stacked(p, p + m);
  stacked << Matrix::Identity(p, p) - a, -b;
  const Matrix basis = null_space_basis(stacked);
  if (basis.cols() != m) {
    throw InvariantError(InvariantErrorKind::BadSteadyState,
                         "steady_state_map: steady-state family has dimension " + std::to_string(basis.cols()) +
                             ", expected " + std::to_string(m));
  }
  SteadyStateMap ss{basis.topRows(p), basis.bottomRows(m)};
  const double residual = ((Matrix::Identity(p, p) - a) * ss.Lambda - b * ss.Psi).cwiseAbs().maxCoeff();
  if (residual > 1e-9) throw InvariantError(InvariantErrorKind::BadSteadyState, "steady_state_map: residual too large");
  return ss;
}

namespace {

// sum_{j < terms} h_W((Acl^j)' a) for every direction, one column per entry count.
// Returns offsets[i](r) for i = 0..terms.
std::vector<Vector> accumulated_supports(const Matrix& acl, const HPolytope& w, const Matrix& directions,
                                         int terms) {
  const Eigen::Index rows = directions.rows();
  std::vector<Vector> out(static_cast<std::size_t>(terms) + 1, Vector::Zero(rows));
  Matrix v = directions.transpose();  // column r is (Acl^j)' a_r
  const Matrix aclt = acl.transpose();
  for (int i = 1; i <= terms; ++i) {
    Vector& cur = out[static_cast<std::size_t>(i)];
    cur = out[static_cast<std::size_t>(i) - 1];
    for (Eigen::Index r = 0; r < rows; ++r) cur(r) += support(w, v.col(r));
    v = aclt * v;
  }
  return out;
}

HPolytope disturbance_in_augmented_space(const HPolytope& w, Eigen::Index m) {
  const Eigen::Index p = w.dim();
  if (auto bx = w.as_box()) {
    Vector lo = Vector::Zero(p + m);
    Vector hi = Vector::Zero(p + m);
    lo.head(p) = bx->first;
    hi.head(p) = bx->second;
    return HPolytope::box(lo, hi);
  }
  Matrix a = Matrix::Zero(w.rows() + 2 * m, p + m);
  Vector b = Vector::Zero(w.rows() + 2 * m);
  a.topLeftCorner(w.rows(), p) = w.A();
  b.head(w.rows()) = w.b();
  a.block(w.rows(), p, m, m) = Matrix::Identity(m, m);
  a.block(w.rows() + m, p, m, m) = -Matrix::Identity(m, m);
  return HPolytope(a, b);
}

}  // namespace

TubeOffsets tube_offsets(const Matrix& acl, const Matrix& k, const HPolytope& w, const HPolytope& x,
                         const HPolytope& u, const HPolytope& omega, int horizon) {
  if (horizon < 1) throw InvariantError(InvariantErrorKind::EmptyTightening, "tube_offsets: horizon must be positive");
  const Eigen::Index p = acl.rows();
  TubeOffsets out;
  out.state = accumulated_supports(acl, w, x.A(), horizon);
  out.input = accumulated_supports(acl, w, u.A() * k, horizon - 1);
  out.terminal = accumulated_supports(acl, w, omega.A().leftCols(p), horizon).back();
  for (int i = 0; i <= horizon; ++i) {
    if (is_empty(tighten(x, out.state[static_cast<std::size_t>(i)]))) {
      throw InvariantError(InvariantErrorKind::EmptyTightening,
                           "tube_offsets: state constraints are empty after tightening at step " + std::to_string(i));
    }
  }
  for (int i = 0; i < horizon; ++i) {
    if (is_empty(tighten(u, out.input[static_cast<std::size_t>(i)]))) {
      throw InvariantError(InvariantErrorKind::EmptyTightening,
                           "tube_offsets: input constraints are empty after tightening at step " + std::to_string(i));
    }
  }
  return out;
}

Vector infinite_tube_support(const Matrix& acl, const HPolytope& w, const Matrix& directions, double tail_tol,
                             int max_terms) {
  Vector total = Vector::Zero(directions.rows());
  const Matrix aclt = acl.transpose();
  for (Eigen::Index r = 0; r < directions.rows(); ++r) {
    Vector v = directions.row(r).transpose();
    const double scale = std::max(v.norm(), 1e-300);
    for (int j = 0; j < max_terms && v.norm() > tail_tol * scale; ++j) {
      total(r) += support(w, v);
      v = aclt * v;
    }
  }
  return total;
}

AdmissibleSetResult max_admissible_set(const Matrix& m, const HPolytope& base, const HPolytope& w,
                                       int max_iterations, bool prune) {
  const Eigen::Index d = base.dim();
  if (m.rows() != d || m.cols() != d || w.dim() != d) {
    throw PolytopeError("max_admissible_set: dimension mismatch");
  }
  if (is_empty(base)) throw InvariantError(InvariantErrorKind::EmptyTerminalSet, "terminal set: base constraints are empty");

  const Eigen::Index k = base.rows();
  Matrix dirs = base.A().transpose();  // column r is (M^t)' a_r
  Vector spent = Vector::Zero(k);      // sum_{j<t} h_W((M^j)' a_r)
  const Matrix mt = m.transpose();

  std::vector<Vector> rows;
  std::vector<double> rhs;
  for (Eigen::Index r = 0; r < k; ++r) {
    rows.push_back(base.A().row(r).transpose());
    rhs.push_back(base.b()(r));
  }
  auto current_set = [&]() {
    Matrix a(static_cast<Eigen::Index>(rows.size()), d);
    Vector b(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      a.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
      b(static_cast<Eigen::Index>(i)) = rhs[i];
    }
    return HPolytope(a, b);
  };

  AdmissibleSetResult result;
  HPolytope current = current_set();
  LPOptions feasible;
  feasible.start = feasible_point(current);
  for (int t = 1; t <= max_iterations; ++t) {
    for (Eigen::Index r = 0; r < k; ++r) spent(r) += support(w, dirs.col(r));
    dirs = mt * dirs;

    bool any_new = false;
    for (Eigen::Index r = 0; r < k; ++r) {
      const Vector g = dirs.col(r);
      const double bound = base.b()(r) - spent(r);
      const double norm = g.norm();
      if (norm < 1e-13) {
        if (bound < -1e-9) throw InvariantError(InvariantErrorKind::EmptyTerminalSet, "terminal set: empty after tightening");
        continue;
      }
      const LPResult lp = solve_lp(g, current, Sense::Maximize, feasible);
      const bool redundant = lp.status == LPStatus::Optimal && lp.value <= bound + 1e-9 * std::max(1.0, norm);
      if (!redundant) any_new = true;
      if (!redundant || !prune) {
        rows.push_back(g / norm);
        rhs.push_back(bound / norm);
      }
    }
    if (!any_new) {
      result.iterations = t - 1;
      result.converged = true;
      break;
    }
    current = current_set();
    feasible.start = feasible_point(current);
    if (!feasible.start) {
      throw InvariantError(InvariantErrorKind::EmptyTerminalSet,
                           "terminal set: empty after " + std::to_string(t) + " tightening steps");
    }
    result.iterations = t;
  }
  result.set = prune ? remove_redundant(current) : current;
  return result;
}

Matrix augmented_map(const Matrix& a, const Matrix& b, const Matrix& k, const SteadyStateMap& ss) {
  const Eigen::Index p = a.rows();
  const Eigen::Index m = b.cols();
  Matrix out = Matrix::Zero(p + m, p + m);
  out.topLeftCorner(p, p) = a + b * k;
  out.topRightCorner(p, m) = b * (ss.Psi - k * ss.Lambda);
  out.bottomRightCorner(m, m) = Matrix::Identity(m, m);
  return out;
}

HPolytope terminal_base_set(const Matrix& k, const SteadyStateMap& ss, const HPolytope& x, const HPolytope& u) {
  const Eigen::Index p = ss.Lambda.rows();
  const Eigen::Index m = ss.Psi.rows();
  const Eigen::Index nx = x.rows();
  const Eigen::Index nu = u.rows();
  Matrix a = Matrix::Zero(2 * nx + 2 * nu, p + m);
  Vector b(2 * nx + 2 * nu);
  a.block(0, 0, nx, p) = x.A();
  a.block(nx, p, nx, m) = x.A() * ss.Lambda;
  a.block(2 * nx, 0, nu, p) = u.A() * k;
  a.block(2 * nx, p, nu, m) = u.A() * (ss.Psi - k * ss.Lambda);
  a.block(2 * nx + nu, p, nu, m) = u.A() * ss.Psi;
  b << x.b(), x.b(), u.b(), u.b();
  return HPolytope(a, b);
}

TerminalSet compute_terminal_set(const Matrix& a, const Matrix& b, const Matrix& k, const SteadyStateMap& ss,
                                 const HPolytope& x, const HPolytope& u, const HPolytope& w,
                                 const TerminalSetOptions& options) {
  const Eigen::Index p = a.rows();
  const Eigen::Index m = b.cols();
  const Matrix acl = a + b * k;
  if (spectral_radius(acl) >= 1.0) throw NumericsError("compute_terminal_set: A + BK is not Schur stable");

  HPolytope base = terminal_base_set(k, ss, x, u);
  const double lambda = options.theta_contraction;
  if (lambda > 0.0 && lambda < 1.0) {
    const Vector sx = infinite_tube_support(acl, w, x.A());
    const Vector su = infinite_tube_support(acl, w, u.A() * k);
    Matrix extra = Matrix::Zero(x.rows() + u.rows(), p + m);
    Vector rhs(x.rows() + u.rows());
    extra.block(0, p, x.rows(), m) = x.A() * ss.Lambda;
    extra.block(x.rows(), p, u.rows(), m) = u.A() * ss.Psi;
    rhs << lambda * (x.b() - sx), lambda * (u.b() - su);
    base = base.intersect(HPolytope(extra, rhs));
  }

  const Matrix maug = augmented_map(a, b, k, ss);
  const AdmissibleSetResult res =
      max_admissible_set(maug, base, disturbance_in_augmented_space(w, m), options.max_iterations);

  TerminalSet ts;
  ts.omega = res.set;
  ts.iterations = res.iterations;
  ts.converged = res.converged;
  ts.theta_contraction = lambda;
  ts.horizon = options.horizon;
  ts.offsets = tube_offsets(acl, k, w, x, u, ts.omega, options.horizon);
  return ts;
}

std::vector<Vector> sample_polytope(const HPolytope& s, int count, std::uint64_t seed) {
  const ChebyshevBall ball = chebyshev_center(s);
  if (ball.radius <= 0.0) throw PolytopeError("sample_polytope: set has no interior");
  const Eigen::Index d = s.dim();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto boundary_point = [&]() {
    Vector dir(d);
    for (Eigen::Index i = 0; i < d; ++i) dir(i) = gauss(rng);
    dir /= dir.norm();
    const Vector ad = s.A() * dir;
    const Vector slack = s.b() - s.A() * ball.center;
    double t = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      if (ad(r) > 1e-14) t = std::min(t, slack(r) / ad(r));
    }
    if (!std::isfinite(t)) throw PolytopeError("sample_polytope: set is unbounded");
    return Vector(ball.center + t * dir);
  };

  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  out.push_back(ball.center);
  std::vector<Vector> rim;
  const int rim_count = std::max(1, count / 2);
  while (static_cast<int>(out.size()) < count && static_cast<int>(rim.size()) < rim_count) {
    rim.push_back(boundary_point());
    out.push_back(rim.back());
  }
  while (static_cast<int>(out.size()) < count) {
    const Vector& p1 = rim[static_cast<std::size_t>(rng() % rim.size())];
    const Vector& p2 = rim[static_cast<std::size_t>(rng() % rim.size())];
    double w0 = -std::log(unit(rng) + 1e-300);
    double w1 = -std::log(unit(rng) + 1e-300);
    double w2 = -std::log(unit(rng) + 1e-300);
    const double total = w0 + w1 + w2;
    out.push_back((w0 * ball.center + w1 * p1 + w2 * p2) / total);
  }
  return out;
}

std::vector<Vector> box_vertex_list(const HPolytope& box) {
  const auto bx = box.as_box();
  if (!bx) throw PolytopeError("box_vertex_list: not an axis-aligned box");
  const auto d = static_cast<int>(box.dim());
  if (d > 20) throw PolytopeError("box_vertex_list: dimension too large");
  std::vector<Vector> out;
  for (long mask = 0; mask < (1L << d); ++mask) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = (mask >> i) & 1 ? bx->second(i) : bx->first(i);
    out.push_back(v);
  }
  return out;
}

TerminalSetCheck verify_terminal_set(const TerminalSet& ts, const Matrix& a, const Matrix& b, const Matrix& k,
                                     const SteadyStateMap& ss, const HPolytope& x, const HPolytope& u,
                                     const HPolytope& w, int samples, std::uint64_t seed, double tol) {
  const Eigen::Index p = a.rows();
  const Eigen::Index m = b.cols();
  const Matrix maug = augmented_map(a, b, k, ss);
  const std::vector<Vector> wv = box_vertex_list(w);
  const Matrix input_map = ss.Psi - k * ss.Lambda;

  TerminalSetCheck check;
  for (const Vector& z : sample_polytope(ts.omega, samples, seed)) {
    ++check.samples;
    const Vector xs = z.head(p);
    const Vector th = z.tail(m);
    const double c = std::max({max_violation(x, xs), max_violation(x, ss.Lambda * th),
                               max_violation(u, k * xs + input_map * th), max_violation(u, ss.Psi * th)});
    check.worst_constraint = std::max(check.worst_constraint, c);
    if (c > tol) ++check.constraint_violations;

    const Vector next = maug * z;
    if ((next.tail(m).array() != th.array()).any()) ++check.theta_block_mismatches;
    double worst = -std::numeric_limits<double>::infinity();
    for (const Vector& wi : wv) {
      Vector zn = next;
      zn.head(p) += wi;
      worst = std::max(worst, max_violation(ts.omega, zn));
    }
    check.worst_invariance = std::max(check.worst_invariance, worst);
    if (worst > tol) ++check.invariance_violations;
  }
  return check;
}

namespace {

nlohmann::json vectors_to_json(const std::vector<Vector>& vs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Vector& v : vs) arr.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return arr;
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto raw = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(raw.size()));
}

}  // namespace

void to_json(nlohmann::json& j, const TerminalSet& ts) {
  j = nlohmann::json{
      {"omega", ts.omega},
      {"state_offsets", vectors_to_json(ts.offsets.state)},
      {"input_offsets", vectors_to_json(ts.offsets.input)},
      {"terminal_offsets", std::vector<double>(ts.offsets.terminal.data(),
                                               ts.offsets.terminal.data() + ts.offsets.terminal.size())},
      {"iterations", ts.iterations},
      {"converged", ts.converged},
      {"theta_contraction", ts.theta_contraction},
      {"horizon", ts.horizon},
      {"key", ts.key},
  };
}

void from_json(const nlohmann::json& j, TerminalSet& ts) {
  ts.omega = j.at("omega").get<HPolytope>();
  ts.offsets.state.clear();
  ts.offsets.input.clear();
  for (const auto& v : j.at("state_offsets")) ts.offsets.state.push_back(vector_from_json(v));
  for (const auto& v : j.at("input_offsets")) ts.offsets.input.push_back(vector_from_json(v));
  ts.offsets.terminal = vector_from_json(j.at("terminal_offsets"));
  ts.iterations = j.at("iterations").get<int>();
  ts.converged = j.at("converged").get<bool>();
  ts.theta_contraction = j.at("theta_contraction").get<double>();
  ts.horizon = j.at("horizon").get<int>();
  ts.key = j.value("key", std::string());
  if (static_cast<int>(ts.offsets.state.size()) != ts.horizon + 1 ||
      static_cast<int>(ts.offsets.input.size()) != ts.horizon || ts.offsets.terminal.size() != ts.omega.rows()) {
    throw PolytopeError("terminal set JSON: offset arrays inconsistent with horizon");
  }
}

}  // namespace lbmpc
