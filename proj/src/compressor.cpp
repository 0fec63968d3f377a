#include "lbmpc/compressor.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace lbmpc {

Vector mg_dynamics(const MGParams& params, const Vector& state, double u) {
  if (state.size() != 4) throw NumericsError("mg_dynamics: state must have 4 entries");
  const double phi = state(kPhi);
  const double psi = state(kPsi);
  const double r = state(kR);
  const double rdot = state(kRdot);
  if (!(psi > 0.0)) throw DomainError("mg_dynamics: pressure rise must be positive");
  Vector d(4);
  d(kPhi) = -psi + params.psi_c + 1.0 + 1.5 * phi - 0.5 * phi * phi * phi;
  d(kPsi) = (phi + 1.0 - r * std::sqrt(psi)) / (params.beta * params.beta);
  d(kR) = rdot;
  d(kRdot) = params.w_n * params.w_n * (u - r) - 2.0 * params.zeta * params.w_n * rdot;
  return d;
}

Equilibrium equilibrium(const MGParams& params, double phi0) {
  const double psi0 = params.psi_c + 1.0 + 1.5 * phi0 - 0.5 * phi0 * phi0 * phi0;
  if (!(psi0 > 0.0)) throw DomainError("equilibrium: pressure rise must be positive");
  Equilibrium eq;
  eq.state = Vector(4);
  eq.state << phi0, psi0, (phi0 + 1.0) / std::sqrt(psi0), 0.0;
  eq.u = eq.state(kR);
  return eq;
}

ContinuousModel linearize(const MGParams& params, const Vector& x0, double /*u0*/) {
  const double b2 = params.beta * params.beta;
  const double phi = x0(kPhi);
  const double psi = x0(kPsi);
  const double r = x0(kR);
  const double wn2 = params.w_n * params.w_n;
  ContinuousModel m{Matrix::Zero(4, 4), Matrix::Zero(4, 1)};
  m.Ac(kPhi, kPhi) = 1.5 - 1.5 * phi * phi;
  m.Ac(kPhi, kPsi) = -1.0;
  m.Ac(kPsi, kPhi) = 1.0 / b2;
  m.Ac(kPsi, kPsi) = -r / (2.0 * b2 * std::sqrt(psi));
  m.Ac(kPsi, kR) = -std::sqrt(psi) / b2;
  m.Ac(kR, kRdot) = 1.0;
  m.Ac(kRdot, kR) = -wn2;
  m.Ac(kRdot, kRdot) = -2.0 * params.zeta * params.w_n;
  m.Bc(kRdot, 0) = wn2;
  return m;
}

Vector plant_step(const MGParams& params, const Vector& state, double u) {
  const Dynamics f = [&](const Vector& x, const Vector& uu) { return mg_dynamics(params, x, uu(0)); };
  const double dt = params.sample_time / params.substeps;
  const Vector uv = Vector::Constant(1, u);
  Vector x = state;
  for (int s = 0; s < params.substeps; ++s) x = rk4_step(f, x, uv, dt);
  return x;
}

Matrix mg_jacobian(const MGParams& params, const Vector& state, double /*u*/) {
  const double b2 = params.beta * params.beta;
  const double phi = state(kPhi);
  const double psi = state(kPsi);
  if (!(psi > 0.0)) throw DomainError("mg_jacobian: pressure rise must be positive");
  const double wn2 = params.w_n * params.w_n;
  Matrix j = Matrix::Zero(4, 5);
  j(kPhi, kPhi) = 1.5 - 1.5 * phi * phi;
  j(kPhi, kPsi) = -1.0;
  j(kPsi, kPhi) = 1.0 / b2;
  j(kPsi, kPsi) = -state(kR) / (2.0 * b2 * std::sqrt(psi));
  j(kPsi, kR) = -std::sqrt(psi) / b2;
  j(kR, kRdot) = 1.0;
  j(kRdot, kR) = -wn2;
  j(kRdot, kRdot) = -2.0 * params.zeta * params.w_n;
  j(kRdot, 4) = wn2;
  return j;
}

Matrix plant_step_jacobian(const MGParams& params, const Vector& state, double u) {
  const double dt = params.sample_time / params.substeps;
  // s = d x / d(x0, u); the last column starts at zero and picks up the input path.
  Matrix s = Matrix::Identity(4, 5);
  Vector x = state;
  auto stage = [&](const Vector& at, const Matrix& ds) {
    const Matrix j = mg_jacobian(params, at, u);
    Matrix out = j.leftCols(4) * ds;
    out.col(4) += j.col(4);
    return out;
  };
  for (int step = 0; step < params.substeps; ++step) {
    const Vector k1 = mg_dynamics(params, x, u);
    const Matrix d1 = stage(x, s);
    const Vector x2 = x + 0.5 * dt * k1;
    const Vector k2 = mg_dynamics(params, x2, u);
    const Matrix d2 = stage(x2, s + 0.5 * dt * d1);
    const Vector x3 = x + 0.5 * dt * k2;
    const Vector k3 = mg_dynamics(params, x3, u);
    const Matrix d3 = stage(x3, s + 0.5 * dt * d2);
    const Vector x4 = x + dt * k3;
    const Vector k4 = mg_dynamics(params, x4, u);
    const Matrix d4 = stage(x4, s + dt * d3);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s += (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
  }
  return s;
}

MGConstraints default_constraints(const Equilibrium& eq) {
  // 0 <= Phi <= 1, 1.1875 <= Psi <= 2.1875, 0.1547 <= r <= 2.1547, |r_dot| <= 20, 0.1547 <= u <= 2.1547
  Vector lo(4);
  Vector hi(4);
  lo << 0.0, 1.1875, 0.1547, -20.0;
  hi << 1.0, 2.1875, 2.1547, 20.0;
  MGConstraints c{HPolytope::box(lo - eq.state, hi - eq.state),
                  HPolytope::box(Vector::Constant(1, 0.1547 - eq.u), Vector::Constant(1, 2.1547 - eq.u))};
  return c;
}

Vector model_residual(const MGParams& params, const Equilibrium& eq, const Matrix& a, const Matrix& b,
                      const Vector& dx, const Vector& du) {
  const Vector next = plant_step(params, eq.state + dx, eq.u + du(0));
  return next - eq.state - a * dx - b * du;
}

Matrix model_residual_jacobian(const MGParams& params, const Equilibrium& eq, const Matrix& a, const Matrix& b,
                               const Vector& dx, const Vector& du) {
  Matrix j = plant_step_jacobian(params, eq.state + dx, eq.u + du(0));
  j.leftCols(4) -= a;
  j.rightCols(1) -= b;
  return j;
}

ModelErrorBound estimate_model_error_bound(const MGParams& params, const Equilibrium& eq, const Matrix& a,
                                           const Matrix& b, const HPolytope& x, const HPolytope& u,
                                           const ModelErrorBoundOptions& options) {
  const auto xb = x.as_box();
  const auto ub = u.as_box();
  if (!xb || !ub) throw PolytopeError("estimate_model_error_bound: X and U must be boxes");
  if (options.grid_density < 2) throw PolytopeError("estimate_model_error_bound: grid needs at least 2 points per axis");
  const Eigen::Index p = x.dim();
  const Eigen::Index m = u.dim();
  const Eigen::Index dims = p + m;
  Vector lo(dims);
  Vector hi(dims);
  lo << xb->first, ub->first;
  hi << xb->second, ub->second;
  lo *= options.region_scale;
  hi *= options.region_scale;

  ModelErrorBound out;
  out.raw_max = Vector::Zero(p);
  const int g = options.grid_density;
  std::vector<int> idx(static_cast<std::size_t>(dims), 0);
  Vector point(dims);
  for (;;) {
    for (Eigen::Index k = 0; k < dims; ++k) {
      point(k) = lo(k) + (hi(k) - lo(k)) * idx[static_cast<std::size_t>(k)] / (g - 1);
    }
    ++out.grid_points;
    try {
      const Vector res = model_residual(params, eq, a, b, point.head(p), point.tail(m));
      out.raw_max = out.raw_max.cwiseMax(res.cwiseAbs());
    } catch (const DomainError&) {
      ++out.excluded;
    }
    Eigen::Index k = 0;
    while (k < dims && ++idx[static_cast<std::size_t>(k)] == g) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == dims) break;
  }
  const Vector half = (1.0 + options.margin) * out.raw_max.array() + options.floor;
  out.W = HPolytope::centered_box(half);
  return out;
}

TrajectoryLog simulate_closed_loop(const MGParams& params, const Equilibrium& eq, const LBMPC& controller,
                                   Oracle& oracle, const Vector& dx_init, int steps,
                                   const SimulationOptions& options) {
  const ControllerConfig& cfg = controller.config();
  TrajectoryLog log;
  Vector x = eq.state + dx_init;
  DecisionPoint shifted;
  bool have_shift = false;
  for (int n = 0; n < steps; ++n) {
    TrajectoryRecord rec;
    rec.step = n;
    rec.t = n * params.sample_time;
    rec.state = x;
    const Vector dx = x - eq.state;
    if (have_shift) {
      const ConstraintSystem cs = controller.build_constraints(dx);
      const Vector z = shifted.stacked();
      const Vector rn = cs.G.rowwise().norm();
      rec.shift_feasible = ((cs.G * z - cs.h).array() / rn.array()).maxCoeff() <= cfg.solver.feasibility_tol;
      if (!rec.shift_feasible) ++log.shift_infeasible_steps;
    }
    const MPCSolution sol = controller.solve(dx, oracle, have_shift ? &shifted : nullptr);
    rec.status = sol.status;
    rec.cost = sol.cost_value;
    rec.solve_ms = options.record_timing ? sol.solve_ms : 0.0;
    rec.min_margin = sol.min_margin;
    if (sol.status == SolveStatus::Infeasible) {
      ++log.infeasible_steps;
      rec.u = eq.u;
      log.records.push_back(rec);
      log.aborted = true;
      log.abort_reason = "controller infeasible at step " + std::to_string(n);
      break;
    }
    const Vector du = sol.u_apply;
    rec.u = eq.u + du(0);
    rec.c0 = sol.point.c.front()(0);
    rec.oracle_norm = oracle.value(dx, du).norm();
    log.max_input_violation = std::max(log.max_input_violation, max_violation(cfg.U, du));
    Vector x_next;
    try {
      x_next = plant_step(params, x, rec.u);
    } catch (const std::exception& e) {
      log.records.push_back(rec);
      log.aborted = true;
      log.abort_reason = std::string("plant integration failed: ") + e.what();
      break;
    }
    const Vector dx_next = x_next - eq.state;
    rec.residual = residual(dx, du, dx_next, cfg.A, cfg.B);
    rec.residual_excess = std::max(0.0, max_violation(cfg.W, rec.residual));
    log.max_residual_excess = std::max(log.max_residual_excess, rec.residual_excess);
    log.max_state_violation = std::max(log.max_state_violation, max_violation(cfg.X, dx_next));
    if (options.learn) oracle.admit(dx, du, dx_next);
    log.records.push_back(rec);
    shifted = controller.shift(sol.point);
    have_shift = true;
    x = x_next;
  }
  log.max_state_violation = std::max(0.0, log.max_state_violation);
  log.max_input_violation = std::max(0.0, log.max_input_violation);
  return log;
}

namespace {

SolveStatus status_from_string(const std::string& s) {
  if (s == "Optimal") return SolveStatus::Optimal;
  if (s == "FallbackFeasible") return SolveStatus::FallbackFeasible;
  if (s == "Infeasible") return SolveStatus::Infeasible;
  throw std::runtime_error("trajectory CSV: unknown status '" + s + "'");
}

}  // namespace

void write_trajectory_csv(std::ostream& out, const TrajectoryLog& log) {
  out << "step,t,phi,psi,r,rdot,u,c0,cost,status,solve_ms,oracle_norm,min_margin\n";
  out << std::setprecision(12);
  for (const TrajectoryRecord& r : log.records) {
    out << r.step << ',' << r.t << ',' << r.state(kPhi) << ',' << r.state(kPsi) << ',' << r.state(kR) << ','
        << r.state(kRdot) << ',' << r.u << ',' << r.c0 << ',' << r.cost << ',' << to_string(r.status) << ','
        << r.solve_ms << ',' << r.oracle_norm << ',' << r.min_margin << '\n';
  }
}

TrajectoryLog read_trajectory_csv(std::istream& in) {
  static const std::string header = "step,t,phi,psi,r,rdot,u,c0,cost,status,solve_ms,oracle_norm,min_margin";
  std::string line;
  if (!std::getline(in, line) || line != header) throw std::runtime_error("trajectory CSV: unexpected header");
  TrajectoryLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 13) throw std::runtime_error("trajectory CSV: expected 13 columns");
    TrajectoryRecord r;
    r.step = std::stoi(cells[0]);
    r.t = std::stod(cells[1]);
    r.state = Vector(4);
    for (int i = 0; i < 4; ++i) r.state(i) = std::stod(cells[static_cast<std::size_t>(2 + i)]);
    r.u = std::stod(cells[6]);
    r.c0 = std::stod(cells[7]);
    r.cost = std::stod(cells[8]);
    r.status = status_from_string(cells[9]);
    r.solve_ms = std::stod(cells[10]);
    r.oracle_norm = std::stod(cells[11]);
    r.min_margin = std::stod(cells[12]);
    if (r.status == SolveStatus::Infeasible) ++log.infeasible_steps;
    log.records.push_back(r);
  }
  return log;
}

double stage_cost(const TrajectoryRecord& rec, const Equilibrium& eq, const Matrix& q, const Matrix& r) {
  const Vector dx = rec.state - eq.state;
  const Vector du = Vector::Constant(1, rec.u - eq.u);
  return dx.dot(q * dx) + du.dot(r * du);
}

}  // namespace lbmpc
