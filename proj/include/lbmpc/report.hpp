#pragma once

#include "lbmpc/compressor.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lbmpc {

/// First step after which ||(Phi, Psi) - (Phi0, Psi0)||_inf <= tol for the
/// rest of the log; nullopt when the last record is still outside.
std::optional<int> settling_step(const TrajectoryLog& log, const Equilibrium& eq, double tol = 0.01);

double cumulative_cost(const TrajectoryLog& log, const Equilibrium& eq, const Matrix& q, const Matrix& r);

struct ControlGap {
  int steps = 0;  // records compared (the shorter log)
  double median = 0.0;
  double max = 0.0;
};

ControlGap control_gap(const TrajectoryLog& a, const TrajectoryLog& b);

enum class Metric { Settling, CumCost, ControlGap };
std::optional<Metric> parse_metric(const std::string& name);

struct CompareReport {
  Metric metric = Metric::Settling;
  std::optional<int> settling_a, settling_b;
  double cost_a = 0.0, cost_b = 0.0;
  ControlGap gap;
};

CompareReport compare_logs(const TrajectoryLog& a, const TrajectoryLog& b, Metric metric, const Equilibrium& eq,
                           const Matrix& q, const Matrix& r);

nlohmann::json report_json(const CompareReport& r);
std::string report_text(const CompareReport& r);

/// gnuplot script plotting Phi, Psi and u against t for each CSV.
std::string plot_script(const std::vector<std::string>& csv_paths);

}  // namespace lbmpc
