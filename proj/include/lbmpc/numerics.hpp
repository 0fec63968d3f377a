#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>

namespace lbmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised on dimension mismatches, non-finite data and violated numerical
/// preconditions (e.g. an unstable matrix handed to the Lyapunov solver).
class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws NumericsError naming `what` when any entry is NaN or Inf.
void require_finite(const Eigen::Ref<const Matrix>& m, const std::string& what);

/// Orthonormal basis of null(M), one column per null direction.
///
/// Rank is decided from the singular values with a tolerance relative to the
/// largest one. Each column is sign-normalized so that its largest-magnitude
/// entry is positive, which makes the result deterministic. A trivial null
/// space yields a matrix with zero columns.
Matrix null_space_basis(const Matrix& m, double rel_tol = 1e-10);

/// Largest eigenvalue modulus.
double spectral_radius(const Matrix& m);

/// Solves Acl' P Acl - P = -Qbar through the Kronecker-vectorized system.
/// Intended for small systems (n <= ~10). Throws when rho(Acl) >= 1 - 1e-9.
Matrix solve_discrete_lyapunov(const Matrix& acl, const Matrix& qbar);

/// Matrix exponential by scaling-and-squaring of a truncated Taylor series.
Matrix expm(const Matrix& m);

struct DiscreteModel {
  Matrix A;
  Matrix B;
};

/// Zero-order-hold discretization: A = e^{Ac Ts}, B = int_0^Ts e^{Ac s} ds Bc,
/// read off the exponential of the augmented block [[Ac, Bc], [0, 0]] Ts.
DiscreteModel discretize_exact(const Matrix& ac, const Matrix& bc, double ts);

using Dynamics = std::function<Vector(const Vector& x, const Vector& u)>;

/// Classical fourth-order Runge-Kutta step with u held constant.
Vector rk4_step(const Dynamics& f, const Vector& x, const Vector& u, double dt);

}  // namespace lbmpc
