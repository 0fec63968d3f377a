#pragma once

#include "lbmpc/polytope.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lbmpc {

enum class InvariantErrorKind { BadSteadyState, EmptyTerminalSet, EmptyTightening };

class InvariantError : public std::runtime_error {
 public:
  InvariantError(InvariantErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  InvariantErrorKind kind() const { return kind_; }

 private:
  InvariantErrorKind kind_;
};

/// Steady states of x+ = Ax + Bu parametrized as x_s = Lambda theta, u_s = Psi theta.
struct SteadyStateMap {
  Matrix Lambda;  // p x m
  Matrix Psi;     // m x m
};

SteadyStateMap steady_state_map(const Matrix& a, const Matrix& b);

/// Supports of the tube cross-sections R_i = sum_{j<i} Acl^j W.
///   state[i](r)  = h_{R_i}(row r of X),      i = 0..N
///   input[i](r)  = h_{K R_i}(row r of U),    i = 0..N-1
///   terminal(r)  = h_{R_N}(x-block of row r of Omega)
struct TubeOffsets {
  std::vector<Vector> state;
  std::vector<Vector> input;
  Vector terminal;
};

/// Throws InvariantError(EmptyTightening) when some X minus R_i or U minus K R_i is empty.
TubeOffsets tube_offsets(const Matrix& acl, const Matrix& k, const HPolytope& w, const HPolytope& x,
                         const HPolytope& u, const HPolytope& omega, int horizon);

/// sum_{j>=0} h_W((Acl^j)' a) for each row a of `s`, truncated once the
/// propagated direction falls below `tail_tol` in norm.
Vector infinite_tube_support(const Matrix& acl, const HPolytope& w, const Matrix& directions,
                             double tail_tol = 1e-14, int max_terms = 200000);

struct AdmissibleSetResult {
  HPolytope set;
  int iterations = 0;  // t*: index of the last constraint family that was needed
  bool converged = false;
};

/// Maximal disturbance-invariant subset of `base` for z+ = M z + w, w in `w`:
/// appends the families (a'M^t) z <= b - sum_{j<t} h_W((M^j)' a) until every
/// row of the next family is redundant. Throws InvariantError(EmptyTerminalSet)
/// when the intersection becomes empty.
AdmissibleSetResult max_admissible_set(const Matrix& m, const HPolytope& base, const HPolytope& w,
                                       int max_iterations, bool prune = true);

struct TerminalSetOptions {
  int max_iterations = 500;
  /// In (0, 1): the limiting steady state must satisfy Lambda theta in
  /// lambda (X minus R_inf) and Psi theta in lambda (U minus K R_inf). This
  /// makes the identity block of the augmented map harmless for termination.
  /// Zero disables the extra rows.
  double theta_contraction = 0.99;
  int horizon = 15;
};

struct TerminalSet {
  HPolytope omega;  // over (x, theta), dimension p + m
  TubeOffsets offsets;
  int iterations = 0;
  bool converged = false;
  double theta_contraction = 0.0;
  int horizon = 0;
  std::string key;  // caller-supplied cache key
};

/// [[A+BK, B(Psi - K Lambda)], [0, I]]
Matrix augmented_map(const Matrix& a, const Matrix& b, const Matrix& k, const SteadyStateMap& ss);

/// Rows of: x in X, Lambda theta in X, Kx + (Psi - K Lambda) theta in U, Psi theta in U.
HPolytope terminal_base_set(const Matrix& k, const SteadyStateMap& ss, const HPolytope& x, const HPolytope& u);

TerminalSet compute_terminal_set(const Matrix& a, const Matrix& b, const Matrix& k, const SteadyStateMap& ss,
                                 const HPolytope& x, const HPolytope& u, const HPolytope& w,
                                 const TerminalSetOptions& options = {});

/// Deterministic points of a bounded polytope with interior: the Chebyshev
/// center, boundary points hit by rays in random directions, and random
/// convex combinations of those.
std::vector<Vector> sample_polytope(const HPolytope& s, int count, std::uint64_t seed);

/// Vertices of an axis-aligned box polytope.
std::vector<Vector> box_vertex_list(const HPolytope& box);

struct TerminalSetCheck {
  int samples = 0;
  int invariance_violations = 0;
  int constraint_violations = 0;
  int theta_block_mismatches = 0;
  double worst_invariance = 0.0;
  double worst_constraint = 0.0;
};

/// Sampling test of disturbance invariance and constraint satisfaction.
TerminalSetCheck verify_terminal_set(const TerminalSet& ts, const Matrix& a, const Matrix& b, const Matrix& k,
                                     const SteadyStateMap& ss, const HPolytope& x, const HPolytope& u,
                                     const HPolytope& w, int samples, std::uint64_t seed, double tol = 1e-8);

void to_json(nlohmann::json& j, const TerminalSet& ts);
void from_json(const nlohmann::json& j, TerminalSet& ts);

}  // namespace lbmpc
