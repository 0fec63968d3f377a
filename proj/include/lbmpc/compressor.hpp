#pragma once

#include "lbmpc/mpc.hpp"

#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

namespace lbmpc {

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Moore-Greitzer surge model with a second-order throttle actuator.
struct MGParams {
  double beta = 1.0;
  double psi_c = 0.0;
  double zeta = 1.0 / std::sqrt(2.0);
  double w_n = std::sqrt(1000.0);
  double sample_time = 0.01;
  int substeps = 10;  // RK4 steps per controller sample
};

// State layout (Phi, Psi, r, r_dot).
enum StateIndex : Eigen::Index { kPhi = 0, kPsi = 1, kR = 2, kRdot = 3 };

/// [Phi', Psi', r', r''] at (state, u). Throws DomainError when Psi <= 0.
Vector mg_dynamics(const MGParams& params, const Vector& state, double u);

struct Equilibrium {
  Vector state;  // (Phi0, Psi0, r0, 0)
  double u = 0.0;
};

Equilibrium equilibrium(const MGParams& params, double phi0);

struct ContinuousModel {
  Matrix Ac;
  Matrix Bc;
};

ContinuousModel linearize(const MGParams& params, const Vector& x0, double u0);

/// d mg_dynamics / d(state, u), 4 x 5.
Matrix mg_jacobian(const MGParams& params, const Vector& state, double u);

/// One controller sample of the nonlinear plant, u held constant.
Vector plant_step(const MGParams& params, const Vector& state, double u);

/// Exact derivative of plant_step with respect to (state, u), obtained by
/// pushing forward sensitivities through the same RK4 stages. 4 x 5.
Matrix plant_step_jacobian(const MGParams& params, const Vector& state, double u);

/// Benchmark operating box constraints in deviation coordinates.
struct MGConstraints {
  HPolytope X;
  HPolytope U;
};

MGConstraints default_constraints(const Equilibrium& eq);

struct ModelErrorBoundOptions {
  int grid_density = 9;        // points per dimension of X x U
  double margin = 0.10;        // relative inflation
  double floor = 1e-6;         // absolute inflation, keeps the box full-dimensional
  /// Fraction of X x U covered by the grid about the equilibrium (1 = all).
  double region_scale = 1.0;
};

struct ModelErrorBound {
  HPolytope W;
  Vector raw_max;     // per-axis max |residual| before inflation
  int grid_points = 0;
  int excluded = 0;   // points dropped for Psi <= 0
};

/// Symmetric box bounding x+ - (A dx + B du) - x0 over a grid of X x U.
ModelErrorBound estimate_model_error_bound(const MGParams& params, const Equilibrium& eq, const Matrix& a,
                                           const Matrix& b, const HPolytope& x, const HPolytope& u,
                                           const ModelErrorBoundOptions& options = {});

/// Discrete one-sample residual of the nominal model in deviation coordinates.
Vector model_residual(const MGParams& params, const Equilibrium& eq, const Matrix& a, const Matrix& b,
                      const Vector& dx, const Vector& du);

/// d model_residual / d(dx, du), 4 x 5.
Matrix model_residual_jacobian(const MGParams& params, const Equilibrium& eq, const Matrix& a, const Matrix& b,
                               const Vector& dx, const Vector& du);

struct TrajectoryRecord {
  int step = 0;
  double t = 0.0;
  Vector state;        // absolute plant state at the start of the step
  double u = 0.0;      // absolute applied input
  double c0 = 0.0;
  double cost = 0.0;   // optimal value of the step's program
  SolveStatus status = SolveStatus::Infeasible;
  double solve_ms = 0.0;
  double oracle_norm = 0.0;
  double min_margin = 0.0;
  // Diagnostics kept in memory only.
  Vector residual;            // one-step model error realized after applying u
  double residual_excess = 0.0;  // max violation of W by that residual
  bool shift_feasible = true;    // previous shifted point was feasible at this step
};

struct TrajectoryLog {
  std::vector<TrajectoryRecord> records;
  int infeasible_steps = 0;
  int shift_infeasible_steps = 0;
  double max_state_violation = 0.0;  // over visited states, deviation coordinates vs X
  double max_input_violation = 0.0;
  double max_residual_excess = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

struct SimulationOptions {
  bool learn = true;           // admit measured transitions into the oracle
  bool record_timing = true;   // false writes solve_ms = 0 for byte-stable logs
};

/// Closed loop: measure, solve, apply u over one sample, admit the transition, log.
TrajectoryLog simulate_closed_loop(const MGParams& params, const Equilibrium& eq, const LBMPC& controller,
                                   Oracle& oracle, const Vector& dx_init, int steps,
                                   const SimulationOptions& options = {});

/// CSV with header step,t,phi,psi,r,rdot,u,c0,cost,status,solve_ms,oracle_norm,min_margin.
void write_trajectory_csv(std::ostream& out, const TrajectoryLog& log);
TrajectoryLog read_trajectory_csv(std::istream& in);

/// Realized stage cost |dx|_Q^2 + |du|_R^2 of one record.
double stage_cost(const TrajectoryRecord& rec, const Equilibrium& eq, const Matrix& q, const Matrix& r);

}  // namespace lbmpc
