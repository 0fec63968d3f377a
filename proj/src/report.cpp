#include "lbmpc/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lbmpc {

std::optional<int> settling_step(const TrajectoryLog& log, const Equilibrium& eq, double tol) {
  std::optional<int> settled;
  for (const TrajectoryRecord& r : log.records) {
    const double dev = std::max(std::abs(r.state(kPhi) - eq.state(kPhi)), std::abs(r.state(kPsi) - eq.state(kPsi)));
    if (dev > tol) {
      settled.reset();
    } else if (!settled) {
      settled = r.step;
    }
  }
  return settled;
}

double cumulative_cost(const TrajectoryLog& log, const Equilibrium& eq, const Matrix& q, const Matrix& r) {
  double total = 0.0;
  for (const TrajectoryRecord& rec : log.records) total += stage_cost(rec, eq, q, r);
  return total;
}

ControlGap control_gap(const TrajectoryLog& a, const TrajectoryLog& b) {
  ControlGap g;
  const std::size_t n = std::min(a.records.size(), b.records.size());
  if (n == 0) return g;
  std::vector<double> gaps(n);
  for (std::size_t i = 0; i < n; ++i) gaps[i] = std::abs(a.records[i].u - b.records[i].u);
  g.steps = static_cast<int>(n);
  g.max = *std::max_element(gaps.begin(), gaps.end());
  std::sort(gaps.begin(), gaps.end());
  g.median = n % 2 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
  return g;
}

std::optional<Metric> parse_metric(const std::string& name) {
  if (name == "settling") return Metric::Settling;
  if (name == "cum_cost") return Metric::CumCost;
  if (name == "control_gap") return Metric::ControlGap;
  return std::nullopt;
}

CompareReport compare_logs(const TrajectoryLog& a, const TrajectoryLog& b, Metric metric, const Equilibrium& eq,
                           const Matrix& q, const Matrix& r) {
  CompareReport out;
  out.metric = metric;
  out.settling_a = settling_step(a, eq);
  out.settling_b = settling_step(b, eq);
  out.cost_a = cumulative_cost(a, eq, q, r);
  out.cost_b = cumulative_cost(b, eq, q, r);
  out.gap = control_gap(a, b);
  return out;
}

namespace {

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Settling: return "settling";
    case Metric::CumCost: return "cum_cost";
    case Metric::ControlGap: return "control_gap";
  }
  return "?";
}

nlohmann::json optional_step(const std::optional<int>& s) { return s ? nlohmann::json(*s) : nlohmann::json(nullptr); }

std::string step_text(const std::optional<int>& s) { return s ? std::to_string(*s) : "not settled"; }

}  // namespace

nlohmann::json report_json(const CompareReport& r) {
  nlohmann::json j{{"metric", metric_name(r.metric)}};
  switch (r.metric) {
    case Metric::Settling:
      j["a"] = optional_step(r.settling_a);
      j["b"] = optional_step(r.settling_b);
      j["a_faster"] = r.settling_a && (!r.settling_b || *r.settling_a < *r.settling_b);
      break;
    case Metric::CumCost:
      j["a"] = r.cost_a;
      j["b"] = r.cost_b;
      break;
    case Metric::ControlGap:
      j["steps"] = r.gap.steps;
      j["median"] = r.gap.median;
      j["max"] = r.gap.max;
      break;
  }
  return j;
}

std::string report_text(const CompareReport& r) {
  std::ostringstream out;
  out.precision(12);
  switch (r.metric) {
    case Metric::Settling:
      out << "settling step: a = " << step_text(r.settling_a) << ", b = " << step_text(r.settling_b) << '\n';
      break;
    case Metric::CumCost:
      out << "cumulative stage cost: a = " << r.cost_a << ", b = " << r.cost_b << '\n';
      break;
    case Metric::ControlGap:
      out << "control gap over " << r.gap.steps << " steps: median = " << r.gap.median << ", max = " << r.gap.max
          << '\n';
      break;
  }
  return out.str();
}

std::string plot_script(const std::vector<std::string>& csv_paths) {
  std::ostringstream out;
  out << "# gnuplot -p plot.gp\n"
         "set datafile separator ','\n"
         "set key autotitle columnhead\n"
         "set multiplot layout 3,1\n";
  const char* panels[][2] = {{"3", "Phi"}, {"4", "Psi"}, {"7", "u"}};
  for (const auto& panel : panels) {
    out << "set ylabel '" << panel[1] << "'\nplot ";
    for (std::size_t i = 0; i < csv_paths.size(); ++i) {
      out << (i ? ", " : "") << "'" << csv_paths[i] << "' using 2:" << panel[0] << " with lines title '"
          << csv_paths[i] << "'";
    }
    out << '\n';
  }
  out << "unset multiplot\n";
  return out.str();
}

}  // namespace lbmpc
