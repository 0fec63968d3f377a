#include "lbmpc/mpc.hpp"

#include "lbmpc/qp.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace lbmpc {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::FallbackFeasible: return "FallbackFeasible";
    case SolveStatus::Infeasible: return "Infeasible";
  }
  return "?";
}

Matrix terminal_weight(const Matrix& a, const Matrix& b, const Matrix& k, const Matrix& q, const Matrix& r) {
  const Matrix acl = a + b * k;
  const Matrix qbar = q + k.transpose() * r * k;
  const Matrix p = solve_discrete_lyapunov(acl, qbar);
  const double res = (acl.transpose() * p * acl - p + qbar).cwiseAbs().maxCoeff();
  if (res > 1e-10 * std::max(1.0, p.cwiseAbs().maxCoeff())) {
    throw NumericsError("terminal_weight: Lyapunov residual too large");
  }
  return p;
}

Vector DecisionPoint::stacked() const {
  const Eigen::Index m = theta.size();
  Vector z(static_cast<Eigen::Index>(c.size()) * m + m);
  for (std::size_t i = 0; i < c.size(); ++i) z.segment(static_cast<Eigen::Index>(i) * m, m) = c[i];
  z.tail(m) = theta;
  return z;
}

DecisionPoint DecisionPoint::unstack(const Vector& z, int n, Eigen::Index m) {
  DecisionPoint d;
  for (int i = 0; i < n; ++i) d.c.push_back(z.segment(static_cast<Eigen::Index>(i) * m, m));
  d.theta = z.tail(m);
  return d;
}

namespace {

Matrix upper_factor(const Matrix& w, const char* what) {
  Eigen::LLT<Matrix> llt(w);
  if (llt.info() != Eigen::Success) throw NumericsError(std::string(what) + " must be positive definite");
  return llt.matrixU();
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

LBMPC::LBMPC(ControllerConfig config) : cfg_(std::move(config)) {
  p_ = cfg_.A.rows();
  m_ = cfg_.B.cols();
  n_ = cfg_.N;
  if (n_ < 1) throw std::invalid_argument("LBMPC: horizon must be positive");
  nz_ = n_ * m_ + m_;
  if (cfg_.terminal.horizon != n_) throw std::invalid_argument("LBMPC: terminal set offsets built for another horizon");
  if (cfg_.x_target.size() == 0) cfg_.x_target = Vector::Zero(p_);
  acl_ = cfg_.A + cfg_.B * cfg_.K;
  if (spectral_radius(acl_) >= 1.0) throw NumericsError("LBMPC: A + BK is not Schur stable");

  lq_ = upper_factor(cfg_.Q, "Q");
  lr_ = upper_factor(cfg_.R, "R");
  lp_ = upper_factor(cfg_.P, "P");
  lt_ = upper_factor(cfg_.T_w, "T_w");
  theta_ref_ = cfg_.steady.Lambda.colPivHouseholderQr().solve(cfg_.x_target);

  theta_select_ = Matrix::Zero(m_, nz_);
  theta_select_.rightCols(m_) = Matrix::Identity(m_, m_);
  state_free_.assign(static_cast<std::size_t>(n_) + 1, Matrix());
  state_forced_.assign(static_cast<std::size_t>(n_) + 1, Matrix());
  input_forced_.assign(static_cast<std::size_t>(n_), Matrix());
  state_free_[0] = Matrix::Identity(p_, p_);
  state_forced_[0] = Matrix::Zero(p_, nz_);
  for (int i = 0; i < n_; ++i) {
    const auto si = static_cast<std::size_t>(i);
    Matrix du = cfg_.K * state_forced_[si];
    du.block(0, static_cast<Eigen::Index>(i) * m_, m_, m_) += Matrix::Identity(m_, m_);
    input_forced_[si] = du;
    state_free_[si + 1] = acl_ * state_free_[si];
    state_forced_[si + 1] = cfg_.A * state_forced_[si] + cfg_.B * du;
  }

  const TubeOffsets& off = cfg_.terminal.offsets;
  const HPolytope& om = cfg_.terminal.omega;
  const Eigen::Index rx = cfg_.X.rows();
  const Eigen::Index ru = cfg_.U.rows();
  const Eigen::Index rows = n_ * (rx + ru) + om.rows();
  base_.G = Matrix::Zero(rows, nz_);
  base_.h = Vector::Zero(rows);
  h_state_ = Matrix::Zero(rows, p_);
  Eigen::Index row = 0;
  for (int i = 0; i < n_; ++i) {
    const auto si = static_cast<std::size_t>(i);
    base_.G.middleRows(row, rx) = cfg_.X.A() * state_forced_[si + 1];
    base_.h.segment(row, rx) = cfg_.X.b() - off.state[si + 1];
    h_state_.middleRows(row, rx) = cfg_.X.A() * state_free_[si + 1];
    row += rx;
    base_.G.middleRows(row, ru) = cfg_.U.A() * input_forced_[si];
    base_.h.segment(row, ru) = cfg_.U.b() - off.input[si];
    h_state_.middleRows(row, ru) = cfg_.U.A() * cfg_.K * state_free_[si];
    row += ru;
  }
  const Matrix ax = om.A().leftCols(p_);
  const Matrix at = om.A().rightCols(m_);
  base_.G.middleRows(row, om.rows()) = ax * state_forced_[static_cast<std::size_t>(n_)] + at * theta_select_;
  base_.h.segment(row, om.rows()) = om.b() - off.terminal;
  h_state_.middleRows(row, om.rows()) = ax * state_free_[static_cast<std::size_t>(n_)];
}

DecisionPoint LBMPC::zero_point() const {
  return DecisionPoint{std::vector<Vector>(static_cast<std::size_t>(n_), Vector::Zero(m_)), Vector::Zero(m_)};
}

NominalRollout LBMPC::rollout_nominal(const Vector& x, const DecisionPoint& point) const {
  NominalRollout r;
  r.x.push_back(x);
  for (int i = 0; i < n_; ++i) {
    const Vector u = cfg_.K * r.x.back() + point.c[static_cast<std::size_t>(i)];
    r.u.push_back(u);
    r.x.push_back(cfg_.A * r.x.back() + cfg_.B * u);
  }
  return r;
}

std::vector<Vector> LBMPC::rollout_learned(const Vector& x, const NominalRollout& nominal,
                                           const Oracle& oracle) const {
  std::vector<Vector> xl{x};
  for (int i = 0; i < n_; ++i) {
    const Vector& u = nominal.u[static_cast<std::size_t>(i)];
    const Vector o = oracle.value(xl.back(), u);
    require_finite(o, "oracle output");
    xl.push_back(cfg_.A * xl.back() + cfg_.B * u + o);
  }
  return xl;
}

double LBMPC::cost(const DecisionPoint& point, const std::vector<Vector>& xl, const std::vector<Vector>& u) const {
  const Vector xs = cfg_.steady.Lambda * point.theta;
  const Vector us = cfg_.steady.Psi * point.theta;
  auto quad = [](const Vector& v, const Matrix& w) { return v.dot(w * v); };
  double total = quad(xl[static_cast<std::size_t>(n_)] - xs, cfg_.P) + quad(cfg_.x_target - xs, cfg_.T_w);
  for (int i = 0; i < n_; ++i) {
    const auto si = static_cast<std::size_t>(i);
    total += quad(xl[si] - xs, cfg_.Q) + quad(u[si] - us, cfg_.R);
  }
  return total;
}

double LBMPC::cost_at(const Vector& x, const Vector& z, const Oracle& oracle) const {
  const DecisionPoint d = DecisionPoint::unstack(z, n_, m_);
  const NominalRollout nom = rollout_nominal(x, d);
  if (oracle.identically_zero()) return cost(d, nom.x, nom.u);
  return cost(d, rollout_learned(x, nom, oracle), nom.u);
}

Vector LBMPC::residuals(const Vector& x, const Vector& z, const Oracle& oracle, Matrix* jac) const {
  const DecisionPoint d = DecisionPoint::unstack(z, n_, m_);
  const NominalRollout nom = rollout_nominal(x, d);
  const Eigen::Index len = n_ * (p_ + m_) + 2 * p_;
  Vector r(len);
  if (jac) jac->setZero(len, nz_);
  const Vector xs = cfg_.steady.Lambda * d.theta;
  const Vector us = cfg_.steady.Psi * d.theta;
  const Matrix dxs = cfg_.steady.Lambda * theta_select_;
  const Matrix dus = cfg_.steady.Psi * theta_select_;
  const bool zero = oracle.identically_zero();

  Vector xl = x;
  Matrix dxl = Matrix::Zero(p_, nz_);
  Eigen::Index row = 0;
  for (int i = 0; i < n_; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const Vector& u = nom.u[si];
    r.segment(row, p_) = lq_ * (xl - xs);
    if (jac) jac->middleRows(row, p_) = lq_ * (dxl - dxs);
    row += p_;
    r.segment(row, m_) = lr_ * (u - us);
    if (jac) jac->middleRows(row, m_) = lr_ * (input_forced_[si] - dus);
    row += m_;
    if (zero) {
      xl = nom.x[si + 1];
      if (jac) dxl = state_forced_[si + 1];
      continue;
    }
    const Vector o = oracle.value(xl, u);
    require_finite(o, "oracle output");
    if (jac) {
      const Matrix g = oracle.gradient(xl, u);
      require_finite(g, "oracle gradient");
      dxl = (cfg_.A + g.leftCols(p_)) * dxl + (cfg_.B + g.rightCols(m_)) * input_forced_[si];
    }
    xl = cfg_.A * xl + cfg_.B * u + o;
  }
  r.segment(row, p_) = lp_ * (xl - xs);
  if (jac) jac->middleRows(row, p_) = lp_ * (dxl - dxs);
  row += p_;
  r.segment(row, p_) = lt_ * (cfg_.x_target - xs);
  if (jac) jac->middleRows(row, p_) = -(lt_ * dxs);
  return r;
}

Vector LBMPC::cost_gradient(const Vector& x, const Vector& z, const Oracle& oracle) const {
  Matrix j;
  const Vector r = residuals(x, z, oracle, &j);
  return 2.0 * j.transpose() * r;
}

LBMPC::Quadratic LBMPC::zero_oracle_quadratic(const Vector& x) const {
  const ZeroOracle zero(p_, m_);
  Matrix j;
  const Vector r0 = residuals(x, Vector::Zero(nz_), zero, &j);
  return Quadratic{2.0 * j.transpose() * j, 2.0 * j.transpose() * r0, r0.squaredNorm()};
}

ConstraintSystem LBMPC::build_constraints(const Vector& x) const {
  return ConstraintSystem{base_.G, base_.h - h_state_ * x};
}

std::optional<Vector> LBMPC::project(const ConstraintSystem& cs, const Vector& point, const Vector& feasible,
                                     const std::vector<Eigen::Index>& warm_active) const {
  QPProblem qp{Matrix::Identity(nz_, nz_), -point, cs.G, cs.h};
  QPOptions opt;
  opt.feasibility_tol = 1e-7;
  const QPResult r = solve_qp(qp, feasible, warm_active, opt);
  if (r.status != QPStatus::Optimal) return std::nullopt;
  return r.z;
}

MPCSolution LBMPC::solve(const Vector& x, const Oracle& oracle, const DecisionPoint* warm_start) const {
  const auto t0 = std::chrono::steady_clock::now();
  require_finite(x, "LBMPC::solve state");
  const ConstraintSystem cs = build_constraints(x);
  const Vector row_norm = cs.G.rowwise().norm().cwiseMax(1e-300);
  auto violation = [&](const Vector& z) {
    return ((cs.G * z - cs.h).array() / row_norm.array()).maxCoeff();
  };
  const double start_tol = 1e-9;

  MPCSolution sol;
  Vector z;
  bool have_start = false;
  if (warm_start) {
    const Vector zw = warm_start->stacked();
    if (zw.size() == nz_ && violation(zw) <= start_tol) {
      z = zw;
      have_start = true;
    }
  }
  if (!have_start) {
    const Vector z0 = Vector::Zero(nz_);
    if (violation(z0) <= start_tol) {
      z = z0;
      have_start = true;
    }
  }
  if (!have_start) {
    const LPResult lp = solve_lp(Vector::Zero(nz_), HPolytope(cs.G, cs.h), Sense::Minimize);
    if (lp.status != LPStatus::Optimal || violation(lp.point) > start_tol) {
      sol.status = SolveStatus::Infeasible;
      sol.point = zero_point();
      sol.u_apply = cfg_.K * x;
      sol.solve_ms = elapsed_ms(t0);
      return sol;
    }
    z = lp.point;
  }
  sol.start_cost = cost_at(x, z, oracle);

  QPOptions qopt;
  qopt.feasibility_tol = 1e-8;
  bool certified = false;
  if (oracle.identically_zero() && !cfg_.solver.force_sqp) {
    const Quadratic q = zero_oracle_quadratic(x);
    const QPResult r = solve_qp(QPProblem{q.H, q.f, cs.G, cs.h}, z, {}, qopt);
    sol.iterations = r.iterations;
    if (r.status == QPStatus::Optimal) {
      z = r.z;
      certified = true;
    }
  } else {
    double f = sol.start_cost;
    std::vector<Eigen::Index> active;
    int stalled = 0;
    for (int it = 0; it < cfg_.solver.max_major_iterations; ++it) {
      Matrix j;
      const Vector r = residuals(x, z, oracle, &j);
      const Vector g = 2.0 * j.transpose() * r;
      const std::optional<Vector> projected = project(cs, z - g, z, active);
      sol.projected_gradient = projected ? (z - *projected).norm() : std::numeric_limits<double>::infinity();
      sol.iterations = it;
      if (sol.projected_gradient <= cfg_.solver.projected_gradient_tol) {
        certified = true;
        break;
      }
      const Matrix h = 2.0 * j.transpose() * j;
      const QPResult step = solve_qp(QPProblem{h, g - h * z, cs.G, cs.h}, z, active, qopt);
      if (step.status != QPStatus::Optimal) break;
      active = step.active;
      const Vector dz = step.z - z;
      const double slope = g.dot(dz);
      if (slope >= 0.0) break;
      double alpha = 1.0;
      double f_new = cost_at(x, z + dz, oracle);
      while (f_new > f + cfg_.solver.armijo * alpha * slope && alpha > 1e-12) {
        alpha *= cfg_.solver.backtrack;
        f_new = cost_at(x, z + alpha * dz, oracle);
      }
      if (f_new > f) break;
      // Stalled: the cost no longer changes at working precision.
      stalled = f - f_new <= 1e-14 * (1.0 + std::abs(f)) ? stalled + 1 : 0;
      z += alpha * dz;
      f = f_new;
      sol.cost_trace.push_back(f);
      sol.iterations = it + 1;
      if (stalled >= 2) break;
    }
  }

  sol.point = DecisionPoint::unstack(z, n_, m_);
  sol.cost_value = cost_at(x, z, oracle);
  sol.status = certified ? SolveStatus::Optimal : SolveStatus::FallbackFeasible;
  sol.min_margin = -(cs.G * z - cs.h).maxCoeff();
  sol.u_apply = control_law(cfg_.K, x, sol);
  sol.solve_ms = elapsed_ms(t0);
  return sol;
}

Vector control_law(const Matrix& k, const Vector& x, const MPCSolution& solution) {
  return k * x + solution.point.c.front();
}

DecisionPoint LBMPC::shift(const DecisionPoint& previous) const {
  return shift_warm_start(previous, cfg_.steady.Psi - cfg_.K * cfg_.steady.Lambda);
}

DecisionPoint shift_warm_start(const DecisionPoint& previous, const Matrix& theta_gain) {
  DecisionPoint next;
  for (std::size_t i = 1; i < previous.c.size(); ++i) next.c.push_back(previous.c[i]);
  next.c.push_back(theta_gain * previous.theta);
  next.theta = previous.theta;
  return next;
}

}  // namespace lbmpc
