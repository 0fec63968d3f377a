#pragma once

#include "lbmpc/numerics.hpp"

#include "json.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace lbmpc {

class PolytopeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// {x in R^d : A x <= b}.
class HPolytope {
 public:
  HPolytope() = default;
  HPolytope(Matrix a, Vector b);

  /// Axis-aligned box lo <= x <= hi, rows ordered (e_0, ..., e_{d-1}, -e_0, ..., -e_{d-1}).
  static HPolytope box(const Vector& lo, const Vector& hi);
  /// Symmetric box |x_i| <= half_width_i.
  static HPolytope centered_box(const Vector& half_width);

  const Matrix& A() const { return a_; }
  const Vector& b() const { return b_; }
  Eigen::Index dim() const { return a_.cols(); }
  Eigen::Index rows() const { return a_.rows(); }

  /// Rows that are identically zero with a negative offset (always violated).
  bool has_infeasible_row() const;

  /// Rows rescaled to unit Euclidean norm; trivially satisfied zero rows dropped.
  HPolytope normalized() const;

  /// Copy without row `index`.
  HPolytope without_row(Eigen::Index index) const;
  /// Copy restricted to the given rows, in the given order.
  HPolytope select_rows(const std::vector<Eigen::Index>& keep) const;
  /// Stacks the rows of `other` below these rows.
  HPolytope intersect(const HPolytope& other) const;

  /// Lower/upper corners when every row is +-e_i (an axis-aligned box).
  std::optional<std::pair<Vector, Vector>> as_box() const;

 private:
  Matrix a_;
  Vector b_;
};

enum class LPStatus { Optimal, Infeasible, Unbounded };
enum class Sense { Minimize, Maximize };

const char* to_string(LPStatus s);

struct LPResult {
  LPStatus status = LPStatus::Infeasible;
  double value = 0.0;
  Vector point;
  int iterations = 0;
};

struct LPOptions {
  /// A point satisfying the constraints. When it does (to 1e-9), the
  /// phase-one solve is skipped; otherwise it seeds phase one.
  std::optional<Vector> start;
};

/// Dense active-set simplex for  max/min cost' x  s.t.  x in region.
///
/// Phase one minimizes the largest normalized violation; phase two walks
/// between working sets of active constraints, refactoring the working-set
/// matrix every iteration. Steepest multiplier/ratio choices are used until a
/// degenerate step occurs, after which Bland's rule (lowest index) applies
/// until the objective strictly improves again.
LPResult solve_lp(const Vector& cost, const HPolytope& region, Sense sense,
                  const LPOptions& options = {});

/// h_S(a) = max{a'x : x in S}; +infinity when S is unbounded along a.
/// Throws PolytopeError when S is empty. Boxes take a closed-form path.
double support(const HPolytope& s, const Vector& a);

/// {x : A x <= b - offsets}. With offsets_i = h_V(a_i) this is S minus V
/// in the Pontryagin sense.
HPolytope tighten(const HPolytope& s, const Vector& offsets);

bool contains(const HPolytope& s, const Vector& x, double tol = 1e-9);

/// Largest value of (A x - b)_i, i.e. the worst constraint violation.
double max_violation(const HPolytope& s, const Vector& x);

bool is_empty(const HPolytope& s);

/// Point minimizing the largest normalized violation; nullopt when that exceeds 1e-9.
std::optional<Vector> feasible_point(const HPolytope& s);

/// True when row `row_index` is implied by the remaining rows. `feasible`
/// (a point of s) saves the phase-one solve.
bool is_redundant(const HPolytope& s, Eigen::Index row_index, double slack = 1e-9, const Vector* feasible = nullptr);

/// Removes redundant rows one at a time, scanning from the last row back.
HPolytope remove_redundant(const HPolytope& s, double slack = 1e-9);

struct ChebyshevBall {
  Vector center;
  double radius = 0.0;
};

/// Largest inscribed Euclidean ball. Throws PolytopeError when S is empty or
/// contains arbitrarily large balls.
ChebyshevBall chebyshev_center(const HPolytope& s);

void to_json(nlohmann::json& j, const HPolytope& p);
void from_json(const nlohmann::json& j, HPolytope& p);

}  // namespace lbmpc
