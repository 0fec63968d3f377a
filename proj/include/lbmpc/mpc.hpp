#pragma once

#include "lbmpc/invariant.hpp"
#include "lbmpc/oracle.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lbmpc {

struct SolverOptions {
  int max_major_iterations = 50;
  double projected_gradient_tol = 1e-6;
  double armijo = 1e-4;
  double backtrack = 0.5;
  double feasibility_tol = 1e-6;
  /// Use the sequential QP path even for an identically zero oracle.
  bool force_sqp = false;
};

struct ControllerConfig {
  Matrix A, B, K;
  int N = 15;
  Matrix Q, R, T_w, P;
  HPolytope X, U, W;
  SteadyStateMap steady;
  TerminalSet terminal;
  Vector x_target;  // desired steady state; theta_ref is its least-squares preimage under Lambda
  SolverOptions solver;
};

/// Fills in P from the Lyapunov equation of A+BK with Q + K'RK and checks it.
Matrix terminal_weight(const Matrix& a, const Matrix& b, const Matrix& k, const Matrix& q, const Matrix& r);

struct DecisionPoint {
  std::vector<Vector> c;  // N perturbations
  Vector theta;

  Vector stacked() const;
  static DecisionPoint unstack(const Vector& z, int n, Eigen::Index m);
};

enum class SolveStatus { Optimal, FallbackFeasible, Infeasible };
const char* to_string(SolveStatus s);

struct MPCSolution {
  DecisionPoint point;
  Vector u_apply;
  double cost_value = 0.0;
  double start_cost = 0.0;   // cost of the starting point handed to the solver
  SolveStatus status = SolveStatus::Infeasible;
  int iterations = 0;
  double solve_ms = 0.0;
  double projected_gradient = 0.0;
  double min_margin = 0.0;   // min_i (h - G z)_i at the returned point
  std::vector<double> cost_trace;  // cost after each major iteration (sequential path)
};

struct NominalRollout {
  std::vector<Vector> x;  // x_bar_0..x_bar_N
  std::vector<Vector> u;  // u_check_0..u_check_{N-1}
};

/// Linear inequality system G z <= h over z = (c_0..c_{N-1}, theta).
struct ConstraintSystem {
  Matrix G;
  Vector h;
};

/// Precomputed affine maps and the oracle-independent constraint matrix.
class LBMPC {
 public:
  explicit LBMPC(ControllerConfig config);

  const ControllerConfig& config() const { return cfg_; }
  Eigen::Index state_dim() const { return p_; }
  Eigen::Index input_dim() const { return m_; }
  Eigen::Index decision_dim() const { return nz_; }
  const Vector& theta_ref() const { return theta_ref_; }

  NominalRollout rollout_nominal(const Vector& x, const DecisionPoint& point) const;
  std::vector<Vector> rollout_learned(const Vector& x, const NominalRollout& nominal, const Oracle& oracle) const;
  double cost(const DecisionPoint& point, const std::vector<Vector>& x_learned, const std::vector<Vector>& u) const;
  double cost_at(const Vector& x, const Vector& z, const Oracle& oracle) const;
  Vector cost_gradient(const Vector& x, const Vector& z, const Oracle& oracle) const;

  /// Quadratic form of the zero-oracle cost: 1/2 z'Hz + f'z + const.
  struct Quadratic {
    Matrix H;
    Vector f;
    double constant = 0.0;
  };
  Quadratic zero_oracle_quadratic(const Vector& x) const;

  ConstraintSystem build_constraints(const Vector& x) const;

  MPCSolution solve(const Vector& x, const Oracle& oracle, const DecisionPoint* warm_start = nullptr) const;

  DecisionPoint zero_point() const;
  /// Shifted successor of `previous` for the next sample.
  DecisionPoint shift(const DecisionPoint& previous) const;

 private:
  // Stacked weighted residuals r(z) with psi = |r|^2, and optionally dr/dz.
  Vector residuals(const Vector& x, const Vector& z, const Oracle& oracle, Matrix* jac) const;
  std::optional<Vector> project(const ConstraintSystem& cs, const Vector& point, const Vector& feasible,
                 const std::vector<Eigen::Index>& warm_active) const;

  ControllerConfig cfg_;
  Eigen::Index p_ = 0, m_ = 0, nz_ = 0;
  int n_ = 0;
  Matrix acl_;
  std::vector<Matrix> state_free_;    // Acl^i, i = 0..N
  std::vector<Matrix> state_forced_;  // d x_bar_i / dz, i = 0..N
  std::vector<Matrix> input_forced_;  // d u_check_i / dz, i = 0..N-1
  Matrix theta_select_;               // z -> theta
  Matrix lq_, lr_, lp_, lt_;          // upper Cholesky factors of Q, R, P, T_w
  ConstraintSystem base_;             // h = base_.h - h_state_ x
  Matrix h_state_;
  Vector theta_ref_;
};

Vector control_law(const Matrix& k, const Vector& x, const MPCSolution& solution);

/// {c_1..c_{N-1}, theta_gain theta; theta}. With theta_gain = Psi - K Lambda the
/// last input is the terminal control law, which keeps the point feasible
/// whenever the realized model error lies in W.
DecisionPoint shift_warm_start(const DecisionPoint& previous, const Matrix& theta_gain);

}  // namespace lbmpc
