#include "lbmpc/config.hpp"
#include "lbmpc/report.hpp"

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

using namespace lbmpc;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitEmpty = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitFailure = 1;

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = path.empty() ? default_config() : load_config(path);
  for (const std::string& o : overrides) c = with_override(c, o);
  return c;
}

bool valid_controller(const std::string& name) {
  const auto& names = controller_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::string controller_list() {
  std::string out;
  for (const auto& n : controller_names()) out += (out.empty() ? "" : "|") + n;
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

int cmd_invariant(const RunConfig& c, const std::string& out_path, bool force) {
  RunConfig cfg = c;
  if (!out_path.empty()) cfg.omega_cache = out_path;
  if (force) std::filesystem::remove(cfg.omega_cache);
  TerminalSet ts;
  bool hit = false;
  try {
    if (cfg.model == "linear") {
      ts = linear_terminal_set(cfg);
      std::ofstream out(cfg.omega_cache);
      if (!out) throw std::runtime_error("cannot write '" + cfg.omega_cache + "'");
      out << nlohmann::json(ts).dump() << '\n';
    } else {
      ts = obtain_terminal_set(cfg, build_problem(cfg), true, &hit);
    }
  } catch (const InvariantError& e) {
    std::cerr << "invariant: " << e.what() << '\n';
    return kExitEmpty;
  }
  const ChebyshevBall ball = chebyshev_center(ts.omega);
  std::cout << (hit ? "cache hit: " : "computed: ") << cfg.omega_cache << '\n'
            << "t* = " << ts.iterations << '\n'
            << "rows = " << ts.omega.rows() << '\n'
            << "chebyshev_radius = " << ball.radius << '\n'
            << "converged = " << (ts.converged ? "true" : "false") << '\n';
  return ts.converged ? 0 : kExitNotConverged;
}

struct RunSummary {
  TrajectoryLog log;
  Problem problem;
};

RunSummary run_simulation(const RunConfig& c, const std::string& controller) {
  RunSummary s;
  s.problem = build_problem(c);
  bool hit = false;
  const TerminalSet ts = obtain_terminal_set(c, s.problem, true, &hit);
  spdlog::info("terminal set {} ({} rows, t* = {})", hit ? "loaded from cache" : "computed", ts.omega.rows(),
               ts.iterations);
  if (!ts.converged) spdlog::warn("terminal set did not converge; invariance is checked by sampling only");
  const LBMPC mpc(controller_config(c, s.problem, ts));
  std::unique_ptr<Oracle> oracle = make_oracle(controller, c, s.problem);
  SimulationOptions opt;
  opt.record_timing = c.record_timing;
  s.log = simulate_closed_loop(c.plant, s.problem.eq, mpc, *oracle, c.initial_offset, c.steps, opt);
  return s;
}

void print_summary(const RunSummary& s, const RunConfig& c) {
  const auto settle = settling_step(s.log, s.problem.eq);
  const double violation = std::max(s.log.max_state_violation, s.log.max_input_violation);
  double total_ms = 0.0;
  for (const auto& r : s.log.records) total_ms += r.solve_ms;
  std::cout << "steps = " << s.log.records.size() << '\n'
            << "settling_step = " << (settle ? std::to_string(*settle) : "none") << '\n'
            << "cumulative_cost = " << cumulative_cost(s.log, s.problem.eq, c.Q, c.R) << '\n'
            << "final_cost = " << (s.log.records.empty() ? 0.0 : s.log.records.back().cost) << '\n'
            << "max_constraint_violation = " << violation << '\n'
            << "infeasible_steps = " << s.log.infeasible_steps << '\n'
            << "max_residual_outside_W = " << s.log.max_residual_excess << '\n';
  if (c.record_timing && !s.log.records.empty()) {
    std::cout << "mean_solve_ms = " << total_ms / static_cast<double>(s.log.records.size()) << '\n';
  }
  if (s.log.aborted) std::cout << "aborted: " << s.log.abort_reason << '\n';
}

int cmd_simulate(const RunConfig& c, const std::string& controller, const std::string& out_path) {
  RunConfig cfg = c;
  if (!out_path.empty()) cfg.trajectory_out = out_path;
  const RunSummary s = run_simulation(cfg, controller);
  std::ofstream out(cfg.trajectory_out);
  if (!out) throw std::runtime_error("cannot write '" + cfg.trajectory_out + "'");
  write_trajectory_csv(out, s.log);
  write_text(std::filesystem::path(cfg.trajectory_out).replace_extension(".gp").string(),
             plot_script({cfg.trajectory_out}));
  print_summary(s, cfg);
  return s.log.aborted ? kExitFailure : 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, Metric metric, const RunConfig& c,
                const std::string& json_out) {
  auto read = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return read_trajectory_csv(in);
  };
  const TrajectoryLog a = read(a_path);
  const TrajectoryLog b = read(b_path);
  const Equilibrium eq = equilibrium(c.plant, c.phi0);
  const CompareReport report = compare_logs(a, b, metric, eq, c.Q, c.R);
  std::cout << report_text(report);
  const std::string j = report_json(report).dump(2);
  if (json_out.empty()) {
    std::cout << j << '\n';
  } else {
    write_text(json_out, j + "\n");
  }
  return 0;
}

// Scenario file: {"scenarios": [{"id": ..., "controller": ..., "overrides": {"key": value, ...}}, ...]}
int cmd_sweep(const RunConfig& base, const std::string& scenario_path, const std::string& out_dir, unsigned jobs) {
  std::ifstream in(scenario_path);
  if (!in) throw std::runtime_error("cannot open '" + scenario_path + "'");
  nlohmann::json scenario_doc;
  in >> scenario_doc;
  struct Scenario {
    std::string id, controller;
    RunConfig config;
  };
  std::vector<Scenario> scenarios;
  std::filesystem::create_directories(out_dir);
  for (const auto& s : scenario_doc.at("scenarios")) {
    Scenario sc;
    sc.id = s.at("id").get<std::string>();
    sc.controller = s.value("controller", std::string("linear"));
    if (!valid_controller(sc.controller)) throw ConfigError("scenario " + sc.id + ": unknown controller");
    sc.config = base;
    if (s.contains("overrides")) {
      for (auto it = s["overrides"].begin(); it != s["overrides"].end(); ++it) {
        sc.config = with_override(sc.config, it.key() + "=" + it.value().dump());
      }
    }
    sc.config.trajectory_out = (std::filesystem::path(out_dir) / (sc.id + ".csv")).string();
    sc.config.omega_cache = (std::filesystem::path(out_dir) / (sc.id + ".omega.json")).string();
    scenarios.push_back(std::move(sc));
  }

  std::atomic<std::size_t> next{0};
  std::mutex print;
  std::vector<int> codes(scenarios.size(), 0);
  auto worker = [&]() {
    for (std::size_t i = next++; i < scenarios.size(); i = next++) {
      const Scenario& sc = scenarios[i];
      try {
        const RunSummary s = run_simulation(sc.config, sc.controller);
        std::ofstream out(sc.config.trajectory_out);
        write_trajectory_csv(out, s.log);
        const auto settle = settling_step(s.log, s.problem.eq);
        std::lock_guard<std::mutex> lock(print);
        std::cout << sc.id << ": steps=" << s.log.records.size()
                  << " settling=" << (settle ? std::to_string(*settle) : "none")
                  << " infeasible=" << s.log.infeasible_steps << '\n';
        codes[i] = s.log.aborted ? kExitFailure : 0;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(print);
        std::cerr << sc.id << ": " << e.what() << '\n';
        codes[i] = kExitFailure;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(scenarios.size())));
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  std::vector<std::string> csvs;
  for (const auto& sc : scenarios) csvs.push_back(sc.config.trajectory_out);
  write_text((std::filesystem::path(out_dir) / "plot.gp").string(), plot_script(csvs));
  return *std::max_element(codes.begin(), codes.end());
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("lbmpc"));
  spdlog::set_level(spdlog::level::warn);
  spdlog::cfg::load_env_levels();  // SPDLOG_LEVEL=info|debug|...

  CLI::App app{"Learning-based tube MPC for the Moore-Greitzer compressor"};
  app.require_subcommand(1);
  app.fallthrough();  // --config and --set may also follow the subcommand
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON run configuration (defaults when omitted)");
  app.add_option("--set", overrides, "Override a config key, e.g. --set horizon=20 --set W.mode=estimated");

  auto* inv = app.add_subcommand("invariant", "Build or reuse the cached terminal set");
  std::string inv_out;
  bool force = false;
  inv->add_option("--out", inv_out, "Terminal set JSON (default: config omega_cache)");
  inv->add_flag("--force", force, "Ignore an existing cache");

  auto* sim = app.add_subcommand("simulate", "Closed-loop run from the configured initial condition");
  std::string controller = "linear";
  std::string sim_out;
  std::string sweep_file;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string sweep_dir = "sweep";
  sim->add_option("--controller", controller, controller_list());
  sim->add_option("--out", sim_out, "Trajectory CSV (default: config trajectory_out)");
  sim->add_option("--sweep", sweep_file, "Run the scenarios of this file instead (same as the sweep command)");
  sim->add_option("--jobs", jobs, "Parallel jobs for --sweep");
  sim->add_option("--out-dir", sweep_dir, "Output directory for --sweep");
  int steps_override = 0;
  auto* steps = sim->add_option("--steps", steps_override, "Override the step count")->check(CLI::PositiveNumber);

  auto* cmp = app.add_subcommand("compare", "Compare two trajectory CSVs");
  std::string log_a, log_b, metric_name = "settling", json_out;
  cmp->add_option("log_a", log_a)->required();
  cmp->add_option("log_b", log_b)->required();
  cmp->add_option("--metric", metric_name, "settling|cum_cost|control_gap");
  cmp->add_option("--json", json_out, "Write the JSON report here instead of stdout");

  auto* sweep = app.add_subcommand("sweep", "Run independent scenarios in a job pool");
  std::string scenarios;
  sweep->add_option("scenarios", scenarios, "Scenario JSON")->required();
  sweep->add_option("--jobs", jobs, "Parallel jobs");
  sweep->add_option("--out-dir", sweep_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    RunConfig c = resolve_config(config_path, overrides);
    if (*inv) return cmd_invariant(c, inv_out, force);
    if (*sim) {
      if (!sweep_file.empty()) return cmd_sweep(c, sweep_file, sweep_dir, jobs);
      if (!valid_controller(controller)) {
        std::cerr << "unknown controller '" << controller << "'\n\n" << sim->help();
        return kExitUsage;
      }
      if (*steps) c.steps = steps_override;
      return cmd_simulate(c, controller, sim_out);
    }
    if (*cmp) {
      const auto metric = parse_metric(metric_name);
      if (!metric) {
        std::cerr << "unknown metric '" << metric_name << "'\n\n" << cmp->help();
        return kExitUsage;
      }
      return cmd_compare(log_a, log_b, *metric, c, json_out);
    }
    if (*sweep) return cmd_sweep(c, scenarios, sweep_dir, jobs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
