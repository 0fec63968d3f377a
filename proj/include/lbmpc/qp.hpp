#pragma once

#include "lbmpc/numerics.hpp"

#include <vector>

namespace lbmpc {

/// min 1/2 z'Hz + f'z  s.t.  G z <= h, with H symmetric positive definite.
struct QPProblem {
  Matrix H;
  Vector f;
  Matrix G;
  Vector h;
};

enum class QPStatus { Optimal, InfeasibleStart, IterationLimit };

const char* to_string(QPStatus s);

struct QPResult {
  QPStatus status = QPStatus::IterationLimit;
  Vector z;
  Vector multipliers;               // one per row of G, zero off the active set
  std::vector<Eigen::Index> active;
  int iterations = 0;
  double kkt_residual = 0.0;        // ||Hz + f + G'mu||_inf
};

struct QPOptions {
  double feasibility_tol = 1e-9;
  double multiplier_tol = 1e-10;
  int max_iterations = 0;           // 0 selects 10 (n + m) + 100
};

/// Primal active-set method started from a feasible point.
///
/// `start` must satisfy G z <= h to within feasibility_tol. `warm_active` is
/// a hint; constraints that are not active at `start` or are linearly
/// dependent on earlier entries are discarded.
QPResult solve_qp(const QPProblem& qp, const Vector& start, const std::vector<Eigen::Index>& warm_active = {},
                  const QPOptions& options = {});

double qp_objective(const QPProblem& qp, const Vector& z);

}  // namespace lbmpc
