#pragma once

#include "lbmpc/polytope.hpp"

#include <deque>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace lbmpc {

/// Learned correction to the nominal dynamics: x+ ~ A x + B u + O(x, u).
/// Queries are const; only `admit` mutates.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::string kind() const = 0;
  virtual Vector value(const Vector& x, const Vector& u) const = 0;
  /// p x (p+m), columns ordered (x, u).
  virtual Matrix gradient(const Vector& x, const Vector& u) const = 0;
  /// Offers one measured transition. Non-learning oracles ignore it.
  virtual void admit(const Vector& /*x*/, const Vector& /*u*/, const Vector& /*x_next*/) {}
  /// True when value() is identically zero, so the controller may take the linear path.
  virtual bool identically_zero() const { return false; }
};

Vector residual(const Vector& x, const Vector& u, const Vector& x_next, const Matrix& a, const Matrix& b);

/// Euclidean projection onto W; closed form for boxes, a small QP otherwise.
Vector project_onto(const HPolytope& w, const Vector& y);

struct Sample {
  Vector xi;  // stacked (x, u)
  Vector y;   // residual
};

/// FIFO buffer of residual samples, clipped into W on admission.
class SampleBuffer {
 public:
  SampleBuffer(Matrix a, Matrix b, HPolytope w, std::size_t capacity);

  /// Computes the residual, projects it onto W, appends, evicts the oldest beyond capacity.
  /// Returns true when the residual had to be projected.
  bool admit(const Vector& x, const Vector& u, const Vector& x_next);
  void push(Sample s);
  void clear() { data_.clear(); }

  const std::deque<Sample>& samples() const { return data_; }
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t clipped() const { return clipped_; }
  const Matrix& A() const { return a_; }
  const Matrix& B() const { return b_; }
  const HPolytope& W() const { return w_; }

 private:
  Matrix a_;
  Matrix b_;
  HPolytope w_;
  std::size_t capacity_;
  std::size_t clipped_ = 0;
  std::deque<Sample> data_;
};

/// Buffer snapshot as CSV: header xi_0..xi_{d-1},y_0..y_{p-1}, one sample per line.
void write_samples_csv(std::ostream& out, const std::deque<Sample>& samples);
std::vector<Sample> read_samples_csv(std::istream& in, Eigen::Index xi_dim);

/// Epanechnikov profile 0.75 (1 - v^2) on |v| < 1.
double kernel(double v);
/// Its derivative, taken as 0 on |v| >= 1.
double dkernel(double v);

class ZeroOracle final : public Oracle {
 public:
  explicit ZeroOracle(Eigen::Index p, Eigen::Index m) : p_(p), m_(m) {}
  std::string kind() const override { return "zero"; }
  Vector value(const Vector&, const Vector&) const override { return Vector::Zero(p_); }
  Matrix gradient(const Vector&, const Vector&) const override { return Matrix::Zero(p_, p_ + m_); }
  bool identically_zero() const override { return true; }

 private:
  Eigen::Index p_;
  Eigen::Index m_;
};

struct L2NWParams {
  double bandwidth = 0.5;
  double lambda = 1e-3;
  std::vector<Eigen::Index> features;  // indices into (x, u); empty = all
  std::size_t capacity = 2000;
  /// When positive, h_n = C n^(-1/d) with d the number of features used.
  double schedule_c = 0.0;
};

/// O(xi) = sum_i Y_i k(Xi_i) / (lambda + sum_i k(Xi_i)),  Xi_i = |xi_sel - X_i,sel|^2 / h^2.
class L2NWOracle final : public Oracle {
 public:
  L2NWOracle(Matrix a, Matrix b, HPolytope w, L2NWParams params);

  std::string kind() const override { return "l2nw"; }
  Vector value(const Vector& x, const Vector& u) const override;
  Matrix gradient(const Vector& x, const Vector& u) const override;
  void admit(const Vector& x, const Vector& u, const Vector& x_next) override;

  double bandwidth() const;
  const L2NWParams& params() const { return params_; }
  SampleBuffer& buffer() { return buffer_; }
  const SampleBuffer& buffer() const { return buffer_; }

 private:
  Vector stack(const Vector& x, const Vector& u) const;

  L2NWParams params_;
  SampleBuffer buffer_;
  std::vector<Eigen::Index> features_;
};

class RankDeficient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LinearFit {
  Matrix F;  // p x p
  Matrix G;  // p x m
};

/// Least-squares F, G minimizing sum |Y_j - F x_j - G u_j|^2 via the normal equations.
/// Throws RankDeficient with fewer than p+m samples or a singular moment matrix.
LinearFit fit_linear_parametric(const std::deque<Sample>& samples, Eigen::Index p);

/// O(x, u) = F x + G u, refit after each admitted sample; coefficients stay
/// at their previous values while the data are rank deficient.
class LinearParametricOracle final : public Oracle {
 public:
  LinearParametricOracle(Matrix a, Matrix b, HPolytope w, std::size_t capacity = 2000);

  std::string kind() const override { return "linear-parametric"; }
  Vector value(const Vector& x, const Vector& u) const override;
  Matrix gradient(const Vector& x, const Vector& u) const override;
  void admit(const Vector& x, const Vector& u, const Vector& x_next) override;

  const LinearFit& fit() const { return fit_; }
  const SampleBuffer& buffer() const { return buffer_; }

 private:
  SampleBuffer buffer_;
  LinearFit fit_;
};

using ResidualModel = std::function<Vector(const Vector& x, const Vector& u)>;
using ResidualJacobian = std::function<Matrix(const Vector& x, const Vector& u)>;

/// Wraps a known discrete residual. The gradient comes from `jacobian` when
/// given, else from central differences with step `fd_step`.
class TrueModelOracle final : public Oracle {
 public:
  TrueModelOracle(ResidualModel g, Eigen::Index p, Eigen::Index m, double fd_step = 1e-6);
  TrueModelOracle(ResidualModel g, ResidualJacobian jacobian, Eigen::Index p, Eigen::Index m);

  std::string kind() const override { return "true-model"; }
  Vector value(const Vector& x, const Vector& u) const override;
  Matrix gradient(const Vector& x, const Vector& u) const override;

 private:
  ResidualModel g_;
  ResidualJacobian jac_;
  Eigen::Index p_;
  Eigen::Index m_;
  double step_;
};

}  // namespace lbmpc
