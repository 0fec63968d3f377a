#include "lbmpc/oracle.hpp"

#include "lbmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace lbmpc {

Vector residual(const Vector& x, const Vector& u, const Vector& x_next, const Matrix& a, const Matrix& b) {
  return x_next - a * x - b * u;
}

Vector project_onto(const HPolytope& w, const Vector& y) {
  if (auto bx = w.as_box()) return y.cwiseMax(bx->first).cwiseMin(bx->second);
  if (contains(w, y, 0.0)) return y;
  const Eigen::Index d = y.size();
  const LPResult start = solve_lp(Vector::Zero(d), w, Sense::Minimize);
  if (start.status != LPStatus::Optimal) throw PolytopeError("project_onto: empty set");
  QPProblem qp{Matrix::Identity(d, d), -y, w.A(), w.b()};
  const QPResult r = solve_qp(qp, start.point);
  if (r.status != QPStatus::Optimal) throw NumericsError("project_onto: projection QP failed");
  return r.z;
}

SampleBuffer::SampleBuffer(Matrix a, Matrix b, HPolytope w, std::size_t capacity)
    : a_(std::move(a)), b_(std::move(b)), w_(std::move(w)), capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("SampleBuffer: capacity must be positive");
  if (!contains(w_, Vector::Zero(w_.dim()), 1e-12)) throw std::invalid_argument("SampleBuffer: W must contain 0");
}

bool SampleBuffer::admit(const Vector& x, const Vector& u, const Vector& x_next) {
  const Vector y = residual(x, u, x_next, a_, b_);
  require_finite(y, "SampleBuffer::admit residual");
  const Vector clipped = project_onto(w_, y);
  const bool moved = (clipped - y).cwiseAbs().maxCoeff() > 0.0;
  if (moved) ++clipped_;
  Sample s;
  s.xi.resize(x.size() + u.size());
  s.xi << x, u;
  s.y = clipped;
  push(std::move(s));
  return moved;
}

void SampleBuffer::push(Sample s) {
  data_.push_back(std::move(s));
  while (data_.size() > capacity_) data_.pop_front();
}

void write_samples_csv(std::ostream& out, const std::deque<Sample>& samples) {
  if (samples.empty()) return;
  const Eigen::Index d = samples.front().xi.size();
  const Eigen::Index p = samples.front().y.size();
  for (Eigen::Index i = 0; i < d; ++i) out << (i ? "," : "") << "xi_" << i;
  for (Eigen::Index i = 0; i < p; ++i) out << ",y_" << i;
  out << '\n' << std::setprecision(17);
  for (const Sample& s : samples) {
    for (Eigen::Index i = 0; i < d; ++i) out << (i ? "," : "") << s.xi(i);
    for (Eigen::Index i = 0; i < p; ++i) out << ',' << s.y(i);
    out << '\n';
  }
}

std::vector<Sample> read_samples_csv(std::istream& in, Eigen::Index xi_dim) {
  std::string line;
  std::vector<Sample> out;
  if (!std::getline(in, line)) return out;
  const auto columns = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  if (columns <= xi_dim) throw std::runtime_error("read_samples_csv: too few columns");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<Eigen::Index>(vals.size()) != columns) throw std::runtime_error("read_samples_csv: ragged row");
    Sample s;
    s.xi = Eigen::Map<Vector>(vals.data(), xi_dim);
    s.y = Eigen::Map<Vector>(vals.data() + xi_dim, columns - xi_dim);
    out.push_back(std::move(s));
  }
  return out;
}

double kernel(double v) { return std::abs(v) < 1.0 ? 0.75 * (1.0 - v * v) : 0.0; }

double dkernel(double v) { return std::abs(v) < 1.0 ? -1.5 * v : 0.0; }

L2NWOracle::L2NWOracle(Matrix a, Matrix b, HPolytope w, L2NWParams params)
    : params_(std::move(params)), buffer_(std::move(a), std::move(b), std::move(w), params_.capacity) {
  if (!(params_.lambda > 0.0)) throw std::invalid_argument("L2NWOracle: lambda must be positive");
  if (!(params_.bandwidth > 0.0) && !(params_.schedule_c > 0.0)) {
    throw std::invalid_argument("L2NWOracle: bandwidth must be positive");
  }
  const Eigen::Index dim = buffer_.A().rows() + buffer_.B().cols();
  features_ = params_.features;
  if (features_.empty()) {
    for (Eigen::Index i = 0; i < dim; ++i) features_.push_back(i);
  }
  for (Eigen::Index f : features_) {
    if (f < 0 || f >= dim) throw std::invalid_argument("L2NWOracle: feature index out of range");
  }
}

double L2NWOracle::bandwidth() const {
  if (params_.schedule_c > 0.0) {
    const double n = std::max<double>(1.0, static_cast<double>(buffer_.size()));
    return params_.schedule_c * std::pow(n, -1.0 / static_cast<double>(features_.size()));
  }
  return params_.bandwidth;
}

Vector L2NWOracle::stack(const Vector& x, const Vector& u) const {
  Vector xi(x.size() + u.size());
  xi << x, u;
  return xi;
}

void L2NWOracle::admit(const Vector& x, const Vector& u, const Vector& x_next) { buffer_.admit(x, u, x_next); }

Vector L2NWOracle::value(const Vector& x, const Vector& u) const {
  const Vector xi = stack(x, u);
  const double inv_h2 = 1.0 / (bandwidth() * bandwidth());
  Vector num = Vector::Zero(x.size());
  double den = params_.lambda;
  for (const Sample& s : buffer_.samples()) {
    double dist2 = 0.0;
    for (Eigen::Index f : features_) {
      const double d = xi(f) - s.xi(f);
      dist2 += d * d;
    }
    const double k = kernel(dist2 * inv_h2);
    if (k == 0.0) continue;
    num += k * s.y;
    den += k;
  }
  return num / den;
}

Matrix L2NWOracle::gradient(const Vector& x, const Vector& u) const {
  const Vector xi = stack(x, u);
  const Eigen::Index p = x.size();
  const auto nf = static_cast<Eigen::Index>(features_.size());
  const double inv_h2 = 1.0 / (bandwidth() * bandwidth());
  Vector num = Vector::Zero(p);
  double den = params_.lambda;
  Matrix dnum = Matrix::Zero(p, nf);  // sum_i Y_i dk(Xi_i) (xi - X_i)_f
  Vector dden = Vector::Zero(nf);     // sum_i dk(Xi_i) (xi - X_i)_f
  Vector diff(nf);
  for (const Sample& s : buffer_.samples()) {
    double dist2 = 0.0;
    for (Eigen::Index c = 0; c < nf; ++c) {
      diff(c) = xi(features_[static_cast<std::size_t>(c)]) - s.xi(features_[static_cast<std::size_t>(c)]);
      dist2 += diff(c) * diff(c);
    }
    const double v = dist2 * inv_h2;
    if (std::abs(v) >= 1.0) continue;
    const double k = kernel(v);
    const double dk = dkernel(v);
    num += k * s.y;
    den += k;
    dnum.noalias() += s.y * (dk * diff).transpose();
    dden += dk * diff;
  }
  Matrix out = Matrix::Zero(p, xi.size());
  const double scale = 2.0 * inv_h2 / (den * den);
  for (Eigen::Index c = 0; c < nf; ++c) {
    out.col(features_[static_cast<std::size_t>(c)]) += scale * (dnum.col(c) * den - num * dden(c));
  }
  return out;
}

LinearFit fit_linear_parametric(const std::deque<Sample>& samples, Eigen::Index p) {
  if (samples.empty()) throw RankDeficient("fit_linear_parametric: no data");
  const Eigen::Index d = samples.front().xi.size();
  if (static_cast<Eigen::Index>(samples.size()) < d) throw RankDeficient("fit_linear_parametric: too few samples");
  Matrix moment = Matrix::Zero(d, d);
  Matrix cross = Matrix::Zero(p, d);
  for (const Sample& s : samples) {
    moment.noalias() += s.xi * s.xi.transpose();
    cross.noalias() += s.y * s.xi.transpose();
  }
  Eigen::FullPivLU<Matrix> lu(moment);
  lu.setThreshold(1e-10);
  if (lu.rank() < d) throw RankDeficient("fit_linear_parametric: regressor moment matrix is singular");
  const Matrix theta = lu.solve(cross.transpose()).transpose();
  return LinearFit{theta.leftCols(p), theta.rightCols(d - p)};
}

LinearParametricOracle::LinearParametricOracle(Matrix a, Matrix b, HPolytope w, std::size_t capacity)
    : buffer_(std::move(a), std::move(b), std::move(w), capacity) {
  const Eigen::Index p = buffer_.A().rows();
  fit_ = LinearFit{Matrix::Zero(p, p), Matrix::Zero(p, buffer_.B().cols())};
}

Vector LinearParametricOracle::value(const Vector& x, const Vector& u) const { return fit_.F * x + fit_.G * u; }

Matrix LinearParametricOracle::gradient(const Vector& x, const Vector& u) const {
  Matrix g(x.size(), x.size() + u.size());
  g << fit_.F, fit_.G;
  return g;
}

void LinearParametricOracle::admit(const Vector& x, const Vector& u, const Vector& x_next) {
  buffer_.admit(x, u, x_next);
  try {
    fit_ = fit_linear_parametric(buffer_.samples(), x.size());
  } catch (const RankDeficient&) {
  }
}

TrueModelOracle::TrueModelOracle(ResidualModel g, Eigen::Index p, Eigen::Index m, double fd_step)
    : g_(std::move(g)), p_(p), m_(m), step_(fd_step) {}

TrueModelOracle::TrueModelOracle(ResidualModel g, ResidualJacobian jacobian, Eigen::Index p, Eigen::Index m)
    : g_(std::move(g)), jac_(std::move(jacobian)), p_(p), m_(m), step_(0.0) {}

Vector TrueModelOracle::value(const Vector& x, const Vector& u) const { return g_(x, u); }

Matrix TrueModelOracle::gradient(const Vector& x, const Vector& u) const {
  if (jac_) return jac_(x, u);
  Matrix out(p_, p_ + m_);
  for (Eigen::Index k = 0; k < p_ + m_; ++k) {
    Vector xp = x, xm = x, up = u, um = u;
    if (k < p_) {
      xp(k) += step_;
      xm(k) -= step_;
    } else {
      up(k - p_) += step_;
      um(k - p_) -= step_;
    }
    out.col(k) = (g_(xp, up) - g_(xm, um)) / (2.0 * step_);
  }
  return out;
}

}  // namespace lbmpc
