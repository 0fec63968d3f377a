#pragma once

#include "lbmpc/compressor.hpp"

#include "json.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace lbmpc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OracleSpec {
  double bandwidth = 0.5;
  double lambda = 1e-3;
  std::size_t capacity = 2000;
  std::vector<Eigen::Index> features{0, 1, 4};  // Phi, Psi, u
  double schedule_c = 0.0;                       // > 0 enables h_n = C n^(-1/d)
};

struct WSpec {
  std::string mode = "explicit";  // explicit | estimated
  Vector half_widths;              // explicit box, deviation coordinates
  ModelErrorBoundOptions estimate;
};

/// Linear system with explicit polytopes, used by `invariant` for small demos.
struct LinearSystemSpec {
  Matrix A, B, K;
  HPolytope X, U, W;
  /// Build the plain maximal admissible set of x+ = (A+BK)x + w over
  /// {x in X, Kx in U}, without the steady-state block.
  bool theta_free = false;
};

struct RunConfig {
  std::string model = "moore-greitzer";  // moore-greitzer | linear
  MGParams plant;
  double phi0 = 0.5;
  Vector x_lo, x_hi;  // absolute state box
  double u_lo = 0.1547, u_hi = 2.1547;
  Matrix K;
  int horizon = 15;
  Matrix Q, R, T_w;
  OracleSpec oracle;
  WSpec w;
  TerminalSetOptions terminal;
  SolverOptions solver;
  int steps = 1200;
  Vector initial_offset;  // x(0) - x0
  std::uint64_t seed = 1;
  bool record_timing = true;
  std::string omega_cache = "omega.json";
  std::string trajectory_out = "trajectory.csv";
  LinearSystemSpec linear;
};

RunConfig default_config();

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown keys and inconsistent
/// dimensions raise ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& c);

/// Applies "a.b.c=<json or bare string>" to the JSON form of `c`.
RunConfig with_override(const RunConfig& c, const std::string& assignment);

/// Everything derived from a Moore-Greitzer RunConfig before the terminal set.
struct Problem {
  Equilibrium eq;
  Matrix A, B;
  HPolytope X, U, W;
  SteadyStateMap steady;
  ModelErrorBound estimated;  // filled when W is estimated
};

Problem build_problem(const RunConfig& c);

/// SHA-256 over every input that determines Omega and the tube offsets.
std::string terminal_set_key(const RunConfig& c, const Problem& p);

/// Loads the cache at c.omega_cache when its key matches, else computes and
/// (if `write_cache`) stores it. `cache_hit` reports which path was taken.
TerminalSet obtain_terminal_set(const RunConfig& c, const Problem& p, bool write_cache, bool* cache_hit = nullptr);

/// Terminal set of the `linear` model section (no cache).
TerminalSet linear_terminal_set(const RunConfig& c);

ControllerConfig controller_config(const RunConfig& c, const Problem& p, const TerminalSet& ts);

/// Controller names accepted by `simulate`.
const std::vector<std::string>& controller_names();

/// linear -> zero, lbmpc-l2nw -> L2NW, lbmpc-param -> least squares,
/// true-model -> the plant's own residual.
std::unique_ptr<Oracle> make_oracle(const std::string& controller, const RunConfig& c, const Problem& p);

}  // namespace lbmpc
