#include "lbmpc/config.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace lbmpc {

namespace {

using nlohmann::json;

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

Vector json_vec(const json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string(what) + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Matrix json_mat(const json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ConfigError(std::string(what) + ": expected a nested array");
  const std::size_t cols = j[0].size();
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != cols) throw ConfigError(std::string(what) + ": ragged rows");
    for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown key '" + where + it.key() + "'");
  }
}

void require_shape(const Matrix& m, Eigen::Index r, Eigen::Index c, const char* what) {
  if (m.rows() != r || m.cols() != c) {
    throw ConfigError(std::string(what) + ": expected " + std::to_string(r) + "x" + std::to_string(c));
  }
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.x_lo = Vector(4);
  c.x_hi = Vector(4);
  c.x_lo << 0.0, 1.1875, 0.1547, -20.0;
  c.x_hi << 1.0, 2.1875, 2.1547, 20.0;
  c.K = Matrix(1, 4);
  c.K << -3.0741, 2.0957, 0.1195, -0.0090;
  c.Q = Matrix::Identity(4, 4);
  c.R = Matrix::Identity(1, 1);
  c.T_w = 1e3 * Matrix::Identity(4, 4);
  c.w.half_widths = Vector(4);
  c.w.half_widths << 7.4e-4, 5.5e-4, 1e-6, 1e-6;
  c.initial_offset = Vector(4);
  c.initial_offset << -0.35, -0.40, 0.0, 0.0;
  return c;
}

void to_json(json& j, const RunConfig& c) {
  j = json{
      {"model", c.model},
      {"plant",
       {{"beta", c.plant.beta},
        {"psi_c", c.plant.psi_c},
        {"zeta", c.plant.zeta},
        {"w_n", c.plant.w_n},
        {"sample_time", c.plant.sample_time},
        {"substeps", c.plant.substeps},
        {"phi0", c.phi0}}},
      {"constraints", {{"x_lo", vec_json(c.x_lo)}, {"x_hi", vec_json(c.x_hi)}, {"u_lo", c.u_lo}, {"u_hi", c.u_hi}}},
      {"K", mat_json(c.K)},
      {"horizon", c.horizon},
      {"Q", mat_json(c.Q)},
      {"R", mat_json(c.R)},
      {"T_w", mat_json(c.T_w)},
      {"oracle",
       {{"bandwidth", c.oracle.bandwidth},
        {"lambda", c.oracle.lambda},
        {"capacity", c.oracle.capacity},
        {"features", c.oracle.features},
        {"schedule_c", c.oracle.schedule_c}}},
      {"W",
       {{"mode", c.w.mode},
        {"half_widths", vec_json(c.w.half_widths)},
        {"grid_density", c.w.estimate.grid_density},
        {"margin", c.w.estimate.margin},
        {"floor", c.w.estimate.floor},
        {"region_scale", c.w.estimate.region_scale}}},
      {"terminal", {{"max_iterations", c.terminal.max_iterations}, {"theta_contraction", c.terminal.theta_contraction}}},
      {"solver",
       {{"max_major_iterations", c.solver.max_major_iterations},
        {"projected_gradient_tol", c.solver.projected_gradient_tol},
        {"armijo", c.solver.armijo},
        {"backtrack", c.solver.backtrack},
        {"feasibility_tol", c.solver.feasibility_tol},
        {"force_sqp", c.solver.force_sqp}}},
      {"steps", c.steps},
      {"initial_offset", vec_json(c.initial_offset)},
      {"seed", c.seed},
      {"record_timing", c.record_timing},
      {"omega_cache", c.omega_cache},
      {"trajectory_out", c.trajectory_out},
  };
  if (c.model == "linear") {
    j["linear"] = json{{"A", mat_json(c.linear.A)}, {"B", mat_json(c.linear.B)}, {"K", mat_json(c.linear.K)},
                       {"X", c.linear.X},           {"U", c.linear.U},           {"W", c.linear.W},
                       {"theta_free", c.linear.theta_free}};
  }
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  try {
    c = default_config();
    reject_unknown(j,
                   {"model", "plant", "constraints", "K", "horizon", "Q", "R", "T_w", "oracle", "W", "terminal",
                    "solver", "steps", "initial_offset", "seed", "record_timing", "omega_cache", "trajectory_out",
                    "linear"},
                   "");
    c.model = j.value("model", c.model);
    if (c.model != "moore-greitzer" && c.model != "linear") throw ConfigError("model must be moore-greitzer or linear");
    if (j.contains("plant")) {
      const json& p = j["plant"];
      reject_unknown(p, {"beta", "psi_c", "zeta", "w_n", "sample_time", "substeps", "phi0"}, "plant.");
      c.plant.beta = p.value("beta", c.plant.beta);
      c.plant.psi_c = p.value("psi_c", c.plant.psi_c);
      c.plant.zeta = p.value("zeta", c.plant.zeta);
      c.plant.w_n = p.value("w_n", c.plant.w_n);
      c.plant.sample_time = p.value("sample_time", c.plant.sample_time);
      c.plant.substeps = p.value("substeps", c.plant.substeps);
      c.phi0 = p.value("phi0", c.phi0);
    }
    if (j.contains("constraints")) {
      const json& k = j["constraints"];
      reject_unknown(k, {"x_lo", "x_hi", "u_lo", "u_hi"}, "constraints.");
      if (k.contains("x_lo")) c.x_lo = json_vec(k["x_lo"], "constraints.x_lo");
      if (k.contains("x_hi")) c.x_hi = json_vec(k["x_hi"], "constraints.x_hi");
      c.u_lo = k.value("u_lo", c.u_lo);
      c.u_hi = k.value("u_hi", c.u_hi);
    }
    if (j.contains("K")) c.K = json_mat(j["K"], "K");
    c.horizon = j.value("horizon", c.horizon);
    if (j.contains("Q")) c.Q = json_mat(j["Q"], "Q");
    if (j.contains("R")) c.R = json_mat(j["R"], "R");
    if (j.contains("T_w")) c.T_w = json_mat(j["T_w"], "T_w");
    if (j.contains("oracle")) {
      const json& o = j["oracle"];
      reject_unknown(o, {"bandwidth", "lambda", "capacity", "features", "schedule_c"}, "oracle.");
      c.oracle.bandwidth = o.value("bandwidth", c.oracle.bandwidth);
      c.oracle.lambda = o.value("lambda", c.oracle.lambda);
      c.oracle.capacity = o.value("capacity", c.oracle.capacity);
      if (o.contains("features")) c.oracle.features = o["features"].get<std::vector<Eigen::Index>>();
      c.oracle.schedule_c = o.value("schedule_c", c.oracle.schedule_c);
    }
    if (j.contains("W")) {
      const json& w = j["W"];
      reject_unknown(w, {"mode", "half_widths", "grid_density", "margin", "floor", "region_scale"}, "W.");
      c.w.mode = w.value("mode", c.w.mode);
      if (c.w.mode != "explicit" && c.w.mode != "estimated") throw ConfigError("W.mode must be explicit or estimated");
      if (w.contains("half_widths")) c.w.half_widths = json_vec(w["half_widths"], "W.half_widths");
      c.w.estimate.grid_density = w.value("grid_density", c.w.estimate.grid_density);
      c.w.estimate.margin = w.value("margin", c.w.estimate.margin);
      c.w.estimate.floor = w.value("floor", c.w.estimate.floor);
      c.w.estimate.region_scale = w.value("region_scale", c.w.estimate.region_scale);
    }
    if (j.contains("terminal")) {
      const json& t = j["terminal"];
      reject_unknown(t, {"max_iterations", "theta_contraction"}, "terminal.");
      c.terminal.max_iterations = t.value("max_iterations", c.terminal.max_iterations);
      c.terminal.theta_contraction = t.value("theta_contraction", c.terminal.theta_contraction);
    }
    if (j.contains("solver")) {
      const json& s = j["solver"];
      reject_unknown(s,
                     {"max_major_iterations", "projected_gradient_tol", "armijo", "backtrack", "feasibility_tol",
                      "force_sqp"},
                     "solver.");
      c.solver.max_major_iterations = s.value("max_major_iterations", c.solver.max_major_iterations);
      c.solver.projected_gradient_tol = s.value("projected_gradient_tol", c.solver.projected_gradient_tol);
      c.solver.armijo = s.value("armijo", c.solver.armijo);
      c.solver.backtrack = s.value("backtrack", c.solver.backtrack);
      c.solver.feasibility_tol = s.value("feasibility_tol", c.solver.feasibility_tol);
      c.solver.force_sqp = s.value("force_sqp", c.solver.force_sqp);
    }
    c.steps = j.value("steps", c.steps);
    if (j.contains("initial_offset")) c.initial_offset = json_vec(j["initial_offset"], "initial_offset");
    c.seed = j.value("seed", c.seed);
    c.record_timing = j.value("record_timing", c.record_timing);
    c.omega_cache = j.value("omega_cache", c.omega_cache);
    c.trajectory_out = j.value("trajectory_out", c.trajectory_out);
    if (j.contains("linear")) {
      const json& l = j["linear"];
      reject_unknown(l, {"A", "B", "K", "X", "U", "W", "theta_free"}, "linear.");
      c.linear.A = json_mat(l.at("A"), "linear.A");
      c.linear.B = json_mat(l.at("B"), "linear.B");
      c.linear.K = json_mat(l.at("K"), "linear.K");
      c.linear.X = l.at("X").get<HPolytope>();
      c.linear.U = l.at("U").get<HPolytope>();
      c.linear.W = l.at("W").get<HPolytope>();
      c.linear.theta_free = l.value("theta_free", false);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const PolytopeError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (c.horizon < 1) throw ConfigError("horizon must be positive");
  if (c.steps < 0) throw ConfigError("steps must be nonnegative");
  if (c.model == "moore-greitzer") {
    if (c.x_lo.size() != 4 || c.x_hi.size() != 4) throw ConfigError("constraints: state boxes need 4 entries");
    if ((c.x_lo.array() >= c.x_hi.array()).any() || c.u_lo >= c.u_hi) throw ConfigError("constraints: empty box");
    require_shape(c.K, 1, 4, "K");
    require_shape(c.Q, 4, 4, "Q");
    require_shape(c.R, 1, 1, "R");
    require_shape(c.T_w, 4, 4, "T_w");
    if (c.initial_offset.size() != 4) throw ConfigError("initial_offset needs 4 entries");
    if (c.w.mode == "explicit" && (c.w.half_widths.size() != 4 || (c.w.half_widths.array() < 0.0).any())) {
      throw ConfigError("W.half_widths needs 4 nonnegative entries");
    }
    for (Eigen::Index f : c.oracle.features) {
      if (f < 0 || f >= 5) throw ConfigError("oracle.features: index out of range for (Phi, Psi, r, r_dot, u)");
    }
  } else {
    const Eigen::Index p = c.linear.A.rows();
    const Eigen::Index m = c.linear.B.cols();
    if (p == 0) throw ConfigError("linear: section required when model is linear");
    require_shape(c.linear.A, p, p, "linear.A");
    require_shape(c.linear.B, p, m, "linear.B");
    require_shape(c.linear.K, m, p, "linear.K");
    if (c.linear.X.dim() != p || c.linear.W.dim() != p || c.linear.U.dim() != m) {
      throw ConfigError("linear: polytope dimensions do not match A and B");
    }
  }
  if (!(c.oracle.lambda > 0.0)) throw ConfigError("oracle.lambda must be positive");
  if (!(c.oracle.bandwidth > 0.0) && !(c.oracle.schedule_c > 0.0)) throw ConfigError("oracle.bandwidth must be positive");
  if (c.oracle.capacity == 0) throw ConfigError("oracle.capacity must be positive");
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return j.get<RunConfig>();
}

void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config '" + path + "'");
  out << json(c).dump(2) << '\n';
}

RunConfig with_override(const RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  std::string pointer = "/" + assignment.substr(0, eq);
  for (char& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json j = c;
  try {
    j[json::json_pointer(pointer)] = value;
  } catch (const json::exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
  return j.get<RunConfig>();
}

Problem build_problem(const RunConfig& c) {
  if (c.model != "moore-greitzer") throw ConfigError("build_problem: only the moore-greitzer model is simulated");
  Problem p;
  p.eq = equilibrium(c.plant, c.phi0);
  const ContinuousModel lin = linearize(c.plant, p.eq.state, p.eq.u);
  const DiscreteModel d = discretize_exact(lin.Ac, lin.Bc, c.plant.sample_time);
  p.A = d.A;
  p.B = d.B;
  p.X = HPolytope::box(c.x_lo - p.eq.state, c.x_hi - p.eq.state);
  p.U = HPolytope::box(Vector::Constant(1, c.u_lo - p.eq.u), Vector::Constant(1, c.u_hi - p.eq.u));
  if (c.w.mode == "estimated") {
    p.estimated = estimate_model_error_bound(c.plant, p.eq, p.A, p.B, p.X, p.U, c.w.estimate);
    p.W = p.estimated.W;
  } else {
    p.W = HPolytope::centered_box(c.w.half_widths);
  }
  p.steady = steady_state_map(p.A, p.B);
  return p;
}

std::string terminal_set_key(const RunConfig& c, const Problem& p) {
  json j{{"A", mat_json(p.A)},
         {"B", mat_json(p.B)},
         {"K", mat_json(c.K)},
         {"X", p.X},
         {"U", p.U},
         {"W", p.W},
         {"horizon", c.horizon},
         {"max_iterations", c.terminal.max_iterations},
         {"theta_contraction", c.terminal.theta_contraction}};
  return sha256_hex(j.dump());
}

TerminalSet obtain_terminal_set(const RunConfig& c, const Problem& p, bool write_cache, bool* cache_hit) {
  const std::string key = terminal_set_key(c, p);
  if (cache_hit) *cache_hit = false;
  if (!c.omega_cache.empty()) {
    std::ifstream in(c.omega_cache);
    if (in) {
      try {
        json j;
        in >> j;
        TerminalSet cached = j.get<TerminalSet>();
        if (cached.key == key) {
          if (cache_hit) *cache_hit = true;
          return cached;
        }
      } catch (const std::exception&) {
        // Unreadable cache: fall through and rebuild it.
      }
    }
  }
  TerminalSetOptions opt = c.terminal;
  opt.horizon = c.horizon;
  TerminalSet ts = compute_terminal_set(p.A, p.B, c.K, p.steady, p.X, p.U, p.W, opt);
  ts.key = key;
  if (write_cache && !c.omega_cache.empty()) {
    // Write-then-rename so concurrent readers never see a partial file.
    const std::string tmp = c.omega_cache + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp);
      if (!out) throw ConfigError("cannot write terminal set cache '" + c.omega_cache + "'");
      out << std::setprecision(17) << json(ts).dump() << '\n';
    }
    std::filesystem::rename(tmp, c.omega_cache);
  }
  return ts;
}

TerminalSet linear_terminal_set(const RunConfig& c) {
  const LinearSystemSpec& l = c.linear;
  if (!l.theta_free) {
    TerminalSetOptions opt = c.terminal;
    opt.horizon = c.horizon;
    return compute_terminal_set(l.A, l.B, l.K, steady_state_map(l.A, l.B), l.X, l.U, l.W, opt);
  }
  const Matrix acl = l.A + l.B * l.K;
  if (spectral_radius(acl) >= 1.0) throw NumericsError("linear_terminal_set: A + BK is not Schur stable");
  const HPolytope base = l.X.intersect(HPolytope(l.U.A() * l.K, l.U.b()));
  const AdmissibleSetResult res = max_admissible_set(acl, base, l.W, c.terminal.max_iterations);
  TerminalSet ts;
  ts.omega = res.set;
  ts.iterations = res.iterations;
  ts.converged = res.converged;
  ts.horizon = c.horizon;
  ts.offsets = tube_offsets(acl, l.K, l.W, l.X, l.U, ts.omega, c.horizon);
  return ts;
}

ControllerConfig controller_config(const RunConfig& c, const Problem& p, const TerminalSet& ts) {
  ControllerConfig cfg;
  cfg.A = p.A;
  cfg.B = p.B;
  cfg.K = c.K;
  cfg.N = c.horizon;
  cfg.Q = c.Q;
  cfg.R = c.R;
  cfg.T_w = c.T_w;
  cfg.P = terminal_weight(p.A, p.B, c.K, c.Q, c.R);
  cfg.X = p.X;
  cfg.U = p.U;
  cfg.W = p.W;
  cfg.steady = p.steady;
  cfg.terminal = ts;
  cfg.x_target = Vector::Zero(p.A.rows());
  cfg.solver = c.solver;
  return cfg;
}

const std::vector<std::string>& controller_names() {
  static const std::vector<std::string> names{"linear", "lbmpc-l2nw", "lbmpc-param", "true-model"};
  return names;
}

std::unique_ptr<Oracle> make_oracle(const std::string& controller, const RunConfig& c, const Problem& p) {
  const Eigen::Index n = p.A.rows();
  const Eigen::Index m = p.B.cols();
  if (controller == "linear") return std::make_unique<ZeroOracle>(n, m);
  if (controller == "lbmpc-l2nw") {
    L2NWParams params;
    params.bandwidth = c.oracle.bandwidth;
    params.lambda = c.oracle.lambda;
    params.features = c.oracle.features;
    params.capacity = c.oracle.capacity;
    params.schedule_c = c.oracle.schedule_c;
    return std::make_unique<L2NWOracle>(p.A, p.B, p.W, params);
  }
  if (controller == "lbmpc-param") return std::make_unique<LinearParametricOracle>(p.A, p.B, p.W, c.oracle.capacity);
  if (controller == "true-model") {
    const MGParams params = c.plant;
    const Equilibrium eq = p.eq;
    const Matrix a = p.A;
    const Matrix b = p.B;
    return std::make_unique<TrueModelOracle>(
        [params, eq, a, b](const Vector& x, const Vector& u) { return model_residual(params, eq, a, b, x, u); },
        [params, eq, a, b](const Vector& x, const Vector& u) {
          return model_residual_jacobian(params, eq, a, b, x, u);
        },
        n, m);
  }
  throw ConfigError("unknown controller '" + controller + "'");
}

}  // namespace lbmpc
