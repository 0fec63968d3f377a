#include "lbmpc/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>

namespace lbmpc {

void require_finite(const Eigen::Ref<const Matrix>& m, const std::string& what) {
  if (!m.allFinite()) {
    throw NumericsError(what + ": non-finite entry");
  }
}

Matrix null_space_basis(const Matrix& m, double rel_tol) {
  require_finite(m, "null_space_basis");
  const Eigen::Index n = m.cols();
  if (n == 0) return Matrix(0, 0);
  if (m.rows() == 0) return Matrix::Identity(n, n);

  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
  const Vector& sigma = svd.singularValues();
  const double smax = sigma.size() > 0 ? sigma(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > rel_tol * smax && sigma(i) > 0.0) ++rank;
  }
  Matrix basis = svd.matrixV().rightCols(n - rank);
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    Eigen::Index imax = 0;
    basis.col(j).cwiseAbs().maxCoeff(&imax);
    if (basis(imax, j) < 0.0) basis.col(j) *= -1.0;
  }
  return basis;
}

double spectral_radius(const Matrix& m) {
  if (m.rows() != m.cols()) throw NumericsError("spectral_radius: matrix not square");
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix solve_discrete_lyapunov(const Matrix& acl, const Matrix& qbar) {
  const Eigen::Index n = acl.rows();
  if (acl.cols() != n || qbar.rows() != n || qbar.cols() != n) {
    throw NumericsError("solve_discrete_lyapunov: dimension mismatch");
  }
  require_finite(acl, "solve_discrete_lyapunov(Acl)");
  require_finite(qbar, "solve_discrete_lyapunov(Qbar)");
  if (spectral_radius(acl) >= 1.0 - 1e-9) {
    throw NumericsError("solve_discrete_lyapunov: Acl is not Schur stable");
  }

  // vec(Acl' P Acl) = (Acl' kron Acl') vec(P) for column-major vec.
  const Matrix at = acl.transpose();
  Matrix lhs = Matrix::Identity(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      lhs.block(i * n, j * n, n, n) -= at(i, j) * at;
    }
  }
  const Vector rhs = Eigen::Map<const Vector>(qbar.data(), n * n);
  const Vector vecp = lhs.fullPivLu().solve(rhs);
  Matrix p = Eigen::Map<const Matrix>(vecp.data(), n, n);
  return 0.5 * (p + p.transpose());
}

Matrix expm(const Matrix& m) {
  if (m.rows() != m.cols()) throw NumericsError("expm: matrix not square");
  require_finite(m, "expm");
  const Eigen::Index n = m.rows();

  const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Matrix scaled = m / std::ldexp(1.0, squarings);

  Matrix result = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  for (int k = 1; k <= 40; ++k) {
    term = term * scaled / static_cast<double>(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-13 * 1e-3) break;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

DiscreteModel discretize_exact(const Matrix& ac, const Matrix& bc, double ts) {
  if (!(ts > 0.0)) throw NumericsError("discretize_exact: sample time must be positive");
  const Eigen::Index n = ac.rows();
  const Eigen::Index m = bc.cols();
  if (ac.cols() != n || bc.rows() != n) throw NumericsError("discretize_exact: dimension mismatch");

  Matrix aug = Matrix::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = ac * ts;
  aug.topRightCorner(n, m) = bc * ts;
  const Matrix e = expm(aug);
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

Vector rk4_step(const Dynamics& f, const Vector& x, const Vector& u, double dt) {
  if (!(dt > 0.0)) throw NumericsError("rk4_step: dt must be positive");
  const Vector k1 = f(x, u);
  const Vector k2 = f(x + 0.5 * dt * k1, u);
  const Vector k3 = f(x + 0.5 * dt * k2, u);
  const Vector k4 = f(x + dt * k3, u);
  Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw NumericsError("rk4_step: integration produced non-finite state");
  return next;
}

}  // namespace lbmpc
