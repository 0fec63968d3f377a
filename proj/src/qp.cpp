#include "lbmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lbmpc {

const char* to_string(QPStatus s) {
  switch (s) {
    case QPStatus::Optimal: return "Optimal";
    case QPStatus::InfeasibleStart: return "InfeasibleStart";
    case QPStatus::IterationLimit: return "IterationLimit";
  }
  return "?";
}

double qp_objective(const QPProblem& qp, const Vector& z) { return 0.5 * z.dot(qp.H * z) + qp.f.dot(z); }

namespace {

// Equality-constrained step  min 1/2 p'Hp + g'p  s.t.  G_W p = 0  by the
// null-space method on a QR factorization of G_W'. Returns (p, lambda) with
// G_W' lambda = -(Hp + g) in the least-squares sense.
std::pair<Vector, Vector> equality_step(const Matrix& h, const Matrix& gw, const Vector& g) {
  const Eigen::Index n = h.rows();
  const Eigen::Index k = gw.rows();
  if (k == 0) return {-h.llt().solve(g), Vector()};
  const Eigen::HouseholderQR<Matrix> qr(gw.transpose());
  const Matrix q = qr.householderQ();
  Vector p = Vector::Zero(n);
  if (k < n) {
    const Matrix z = q.rightCols(n - k);
    p = -z * (z.transpose() * h * z).llt().solve(z.transpose() * g);
  }
  const Vector rhs = -(q.leftCols(k).transpose() * (h * p + g));
  const Vector lambda = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(rhs);
  return {p, lambda};
}

Matrix rows_of(const Matrix& g, const std::vector<Eigen::Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), g.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = g.row(idx[k]);
  return out;
}

}  // namespace

QPResult solve_qp(const QPProblem& qp, const Vector& start, const std::vector<Eigen::Index>& warm_active,
                  const QPOptions& options) {
  const Eigen::Index n = qp.H.rows();
  const Eigen::Index m = qp.G.rows();
  if (qp.H.cols() != n || qp.f.size() != n || start.size() != n || (m > 0 && qp.G.cols() != n) ||
      qp.h.size() != m) {
    throw NumericsError("solve_qp: dimension mismatch");
  }
  QPResult result;
  result.z = start;
  result.multipliers = Vector::Zero(m);

  const Vector row_norm = m > 0 ? Vector(qp.G.rowwise().norm().cwiseMax(1e-300)) : Vector();
  if (m > 0 && ((qp.G * start - qp.h).array() / row_norm.array()).maxCoeff() > options.feasibility_tol) {
    result.status = QPStatus::InfeasibleStart;
    return result;
  }

  if (Eigen::LLT<Matrix>(qp.H).info() != Eigen::Success) throw NumericsError("solve_qp: Hessian is not positive definite");
  std::vector<Eigen::Index> work;
  std::vector<bool> in_work(static_cast<std::size_t>(m), false);
  for (Eigen::Index i : warm_active) {
    if (i < 0 || i >= m || in_work[static_cast<std::size_t>(i)]) continue;
    if (std::abs(qp.G.row(i).dot(start) - qp.h(i)) > options.feasibility_tol * row_norm(i)) continue;
    std::vector<Eigen::Index> trial = work;
    trial.push_back(i);
    const Matrix gw = rows_of(qp.G, trial);
    Eigen::FullPivLU<Matrix> lu(gw);
    lu.setThreshold(1e-10);
    if (lu.rank() < static_cast<Eigen::Index>(trial.size())) continue;
    work = std::move(trial);
    in_work[static_cast<std::size_t>(i)] = true;
  }

  Vector& z = result.z;
  const int max_it = options.max_iterations > 0 ? options.max_iterations : static_cast<int>(10 * (n + m) + 100);
  const double scale = 1.0 + qp.H.cwiseAbs().maxCoeff();

  // After a zero-length step both choices fall back to lowest index, which
  // breaks the drop/add cycles that degenerate vertices otherwise produce.
  bool degenerate = false;
  bool subspace_min = false;  // last step was a full unblocked one
  for (int it = 0; it < max_it; ++it) {
    result.iterations = it + 1;
    const Vector g = qp.H * z + qp.f;
    const auto [p, lambda] = equality_step(qp.H, rows_of(qp.G, work), g);

    if (subspace_min || p.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + z.cwiseAbs().maxCoeff())) {
      subspace_min = false;
      Eigen::Index worst = -1;
      const double tol = -options.multiplier_tol * scale;
      for (Eigen::Index k = 0; k < lambda.size(); ++k) {
        if (lambda(k) >= tol) continue;
        if (worst < 0 || (degenerate ? work[static_cast<std::size_t>(k)] < work[static_cast<std::size_t>(worst)]
                                     : lambda(k) < lambda(worst))) {
          worst = k;
        }
      }
      if (worst < 0) {
        result.status = QPStatus::Optimal;
        result.multipliers.setZero();
        for (std::size_t k = 0; k < work.size(); ++k) {
          result.multipliers(work[k]) = std::max(lambda(static_cast<Eigen::Index>(k)), 0.0);
        }
        result.active = work;
        const Vector stat = m > 0 ? Vector(g + qp.G.transpose() * result.multipliers) : g;
        result.kkt_residual = stat.cwiseAbs().maxCoeff();
        return result;
      }
      in_work[static_cast<std::size_t>(work[static_cast<std::size_t>(worst)])] = false;
      work.erase(work.begin() + worst);
      continue;
    }

    const double pn = p.norm();
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (in_work[static_cast<std::size_t>(i)]) continue;
      const double gp = qp.G.row(i).dot(p);
      if (gp <= 1e-12 * row_norm(i) * pn) continue;
      const double step = std::max(qp.h(i) - qp.G.row(i).dot(z), 0.0) / gp;
      if (step < alpha - 1e-14 || (blocking < 0 && step <= alpha)) {
        alpha = step;
        blocking = i;
      } else if (!degenerate && blocking >= 0 && step <= alpha + 1e-14 &&
                 gp / row_norm(i) > qp.G.row(blocking).dot(p) / row_norm(blocking)) {
        blocking = i;
      }
    }
    z += alpha * p;
    subspace_min = blocking < 0;
    degenerate = blocking >= 0 && alpha * pn <= 1e-13 * (1.0 + z.cwiseAbs().maxCoeff());
    if (blocking >= 0) {
      work.push_back(blocking);
      in_work[static_cast<std::size_t>(blocking)] = true;
    }
  }
  result.status = QPStatus::IterationLimit;
  result.active = work;
  return result;
}

}  // namespace lbmpc
