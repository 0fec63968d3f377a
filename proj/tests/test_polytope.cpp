#include "lbmpc/polytope.hpp"

#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using lbmpc::HPolytope;
using lbmpc::LPStatus;
using lbmpc::Matrix;
using lbmpc::Sense;
using lbmpc::Vector;

namespace {

HPolytope interval(double lo, double hi) { return HPolytope::box(Vector::Constant(1, lo), Vector::Constant(1, hi)); }

HPolytope unit_box(int d) { return HPolytope::centered_box(Vector::Ones(d)); }

// Same set as unit_box(2) but with rows scaled so the closed-form box path is skipped.
HPolytope scaled_unit_box() {
  Matrix a(4, 2);
  a << 2, 0, 0, 3, -0.5, 0, 0, -4;
  Vector b(4);
  b << 2, 3, 0.5, 4;
  return {a, b};
}

}  // namespace

TEST(SolveLp, IntervalMaximum) {
  const auto r = lbmpc::solve_lp(Vector::Ones(1), interval(-1, 1), Sense::Maximize);
  ASSERT_EQ(r.status, LPStatus::Optimal);
  EXPECT_NEAR(r.value, 1.0, 1e-12);
}

TEST(SolveLp, BoxCorner) {
  const auto r = lbmpc::solve_lp(Vector::Ones(2), unit_box(2), Sense::Maximize);
  ASSERT_EQ(r.status, LPStatus::Optimal);
  EXPECT_NEAR(r.value, 2.0, 1e-12);
  EXPECT_NEAR(r.point(0), 1.0, 1e-12);
  EXPECT_NEAR(r.point(1), 1.0, 1e-12);
}

TEST(SolveLp, MinimizeIsNegatedMaximize) {
  Vector c(2);
  c << 1, -2;
  const auto r = lbmpc::solve_lp(c, unit_box(2), Sense::Minimize);
  ASSERT_EQ(r.status, LPStatus::Optimal);
  EXPECT_NEAR(r.value, -3.0, 1e-12);
}

TEST(SolveLp, ReportsInfeasibleAndUnbounded) {
  Matrix a(2, 1);
  a << 1, -1;
  Vector b(2);
  b << -1, -1;  // x <= -1 and x >= 1
  EXPECT_EQ(lbmpc::solve_lp(Vector::Ones(1), HPolytope(a, b), Sense::Maximize).status, LPStatus::Infeasible);

  Matrix half(1, 2);
  half << 1, 0;
  const HPolytope halfplane(half, Vector::Ones(1));
  Vector up(2);
  up << 0, 1;
  EXPECT_EQ(lbmpc::solve_lp(up, halfplane, Sense::Maximize).status, LPStatus::Unbounded);
  Vector right(2);
  right << 1, 0;
  const auto r = lbmpc::solve_lp(right, halfplane, Sense::Maximize);
  ASSERT_EQ(r.status, LPStatus::Optimal);  // rank-deficient constraint matrix
  EXPECT_NEAR(r.value, 1.0, 1e-12);
}

TEST(SolveLp, DegenerateVertexTerminates) {
  // Many constraints through the same vertex (1, 1).
  const int k = 12;
  Matrix a(k + 2, 2);
  Vector b(k + 2);
  for (int i = 0; i < k; ++i) {
    const double t = 0.1 + 1.3 * i / k;
    a(i, 0) = std::cos(t);
    a(i, 1) = std::sin(t);
    b(i) = a(i, 0) + a(i, 1);
  }
  a.row(k) << -1, 0;
  a.row(k + 1) << 0, -1;
  b(k) = 5;
  b(k + 1) = 5;
  const auto r = lbmpc::solve_lp(Vector::Ones(2), HPolytope(a, b), Sense::Maximize);
  ASSERT_EQ(r.status, LPStatus::Optimal);
  EXPECT_NEAR(r.value, 2.0, 1e-9);
}

TEST(SolveLp, AgreesWithVertexEnumerationOnRandomPolygons) {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> ang(0.0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> off(0.2, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 3 + trial % 6;  // 3..8 constraints, bounded by construction
    Matrix a(k, 2);
    Vector b(k);
    const double base = ang(rng);
    for (int i = 0; i < k; ++i) {
      const double t = i < 3 ? base + i * 2 * std::numbers::pi / 3 : ang(rng);
      a(i, 0) = std::cos(t) * off(rng);
      a(i, 1) = std::sin(t) * off(rng);
      b(i) = off(rng) - 0.5;
    }
    const HPolytope p(a, b);
    const Vector c = lbmpc::testing::random_direction(rng, 2);
    bool found = false;
    const double brute = lbmpc::testing::max_over_vertices_2d(p, c, &found);
    const auto r = lbmpc::solve_lp(c, p, Sense::Maximize);
    if (!found) {
      EXPECT_EQ(r.status, LPStatus::Infeasible) << "trial " << trial;
      continue;
    }
    ASSERT_EQ(r.status, LPStatus::Optimal) << "trial " << trial;
    EXPECT_NEAR(r.value, brute, 1e-8) << "trial " << trial;
    EXPECT_LE(lbmpc::max_violation(p, r.point), 1e-8);
  }
}

TEST(Support, UnitBoxDirections) {
  Vector e1(2);
  e1 << 1, 0;
  EXPECT_DOUBLE_EQ(lbmpc::support(unit_box(2), e1), 1.0);
  EXPECT_DOUBLE_EQ(lbmpc::support(unit_box(2), Vector::Ones(2)), 2.0);
  EXPECT_NEAR(lbmpc::support(scaled_unit_box(), Vector::Ones(2)), 2.0, 1e-12);
}

TEST(Support, SmallBoxClosedFormMatchesLp) {
  std::mt19937 rng(5);
  const HPolytope w = HPolytope::centered_box(Vector::Constant(4, 0.01));
  for (int i = 0; i < 50; ++i) {
    const Vector a = lbmpc::testing::random_direction(rng, 4);
    const double closed = 0.01 * a.cwiseAbs().sum();
    EXPECT_NEAR(lbmpc::support(w, a), closed, 1e-15);
    EXPECT_NEAR(lbmpc::testing::lp_support(w, a), closed, 1e-12);
  }
}

TEST(Support, UnboundedAndEmpty) {
  Matrix half(1, 2);
  half << 1, 0;
  Vector up(2);
  up << 0, 1;
  EXPECT_TRUE(std::isinf(lbmpc::support(HPolytope(half, Vector::Ones(1)), up)));
  EXPECT_THROW(lbmpc::support(interval(1, -1), Vector::Ones(1)), lbmpc::PolytopeError);
}

TEST(Support, SubAdditiveOnRandomBoxes) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + trial % 4;
    const auto bx = lbmpc::testing::random_box(rng, d);
    const HPolytope s = HPolytope::box(bx.lo, bx.hi);
    const Vector a1 = lbmpc::testing::random_direction(rng, d);
    const Vector a2 = lbmpc::testing::random_direction(rng, d) * 3.0;
    EXPECT_LE(lbmpc::support(s, a1 + a2), lbmpc::support(s, a1) + lbmpc::support(s, a2) + 1e-8);
  }
}

TEST(Tighten, IntervalShrinks) {
  const HPolytope t = lbmpc::tighten(interval(0, 1), Vector::Constant(2, 0.1));
  const auto bx = t.as_box();
  ASSERT_TRUE(bx);
  EXPECT_NEAR(bx->first(0), 0.1, 1e-15);
  EXPECT_NEAR(bx->second(0), 0.9, 1e-15);
}

TEST(Tighten, BoxMinusItselfIsOrigin) {
  const HPolytope t = lbmpc::tighten(unit_box(2), Vector::Ones(4));
  EXPECT_FALSE(lbmpc::is_empty(t));
  EXPECT_TRUE(lbmpc::contains(t, Vector::Zero(2), 1e-12));
  Vector off(2);
  off << 1e-6, 0;
  EXPECT_FALSE(lbmpc::contains(t, off, 1e-9));
}

TEST(Tighten, WrongOffsetCountThrows) {
  EXPECT_THROW(lbmpc::tighten(unit_box(2), Vector::Ones(3)), lbmpc::PolytopeError);
}

TEST(Contains, ToleranceBoundary) {
  const double tol = 1e-6;
  EXPECT_TRUE(lbmpc::contains(unit_box(2), Vector::Zero(2), tol));
  Vector x(2);
  x << 1 + 2 * tol, 0;
  EXPECT_FALSE(lbmpc::contains(unit_box(2), x, tol));
  x(0) = 1 + 0.5 * tol;
  EXPECT_TRUE(lbmpc::contains(unit_box(2), x, tol));
}

TEST(IsEmpty, ContradictoryHalfLines) {
  Matrix a(2, 1);
  a << 1, -1;
  Vector b(2);
  b << -1, -1;
  EXPECT_TRUE(lbmpc::is_empty(HPolytope(a, b)));
  EXPECT_FALSE(lbmpc::is_empty(unit_box(3)));
}

TEST(IsEmpty, GeometricTubeOffsetEventuallyEmptiesInterval) {
  // offsets sum_{j<i} 0.5^j * 0.6 exceed the half-width 1 once i >= 2.
  double offset = 0.0;
  bool emptied = false;
  for (int i = 0; i < 10; ++i) {
    const HPolytope t = lbmpc::tighten(interval(-1, 1), Vector::Constant(2, offset));
    if (offset > 1.0) {
      EXPECT_TRUE(lbmpc::is_empty(t));
      emptied = true;
    } else {
      EXPECT_FALSE(lbmpc::is_empty(t));
    }
    offset += std::pow(0.5, i) * 0.6;
  }
  EXPECT_TRUE(emptied);
}

TEST(IsEmpty, ZeroRowWithNegativeOffsetIsFlagged) {
  Matrix a(2, 1);
  a << 0, 1;
  Vector b(2);
  b << -1, 1;
  const HPolytope p(a, b);
  EXPECT_TRUE(p.has_infeasible_row());
  EXPECT_TRUE(lbmpc::is_empty(p));
}

TEST(IsRedundant, NestedHalfLines) {
  Matrix a(2, 1);
  a << 1, 1;
  Vector b(2);
  b << 1, 2;
  const HPolytope p(a, b);
  EXPECT_TRUE(lbmpc::is_redundant(p, 1));
  EXPECT_FALSE(lbmpc::is_redundant(p, 0));
  const HPolytope pruned = lbmpc::remove_redundant(p);
  EXPECT_EQ(pruned.rows(), 1);
  EXPECT_DOUBLE_EQ(pruned.b()(0), 1.0);
}

TEST(Chebyshev, BoxAndInterval) {
  const auto c = lbmpc::chebyshev_center(unit_box(2));
  EXPECT_NEAR(c.radius, 1.0, 1e-12);
  EXPECT_NEAR(c.center.norm(), 0.0, 1e-12);
  const auto i = lbmpc::chebyshev_center(interval(0.1, 0.9));
  EXPECT_NEAR(i.center(0), 0.5, 1e-12);
  EXPECT_NEAR(i.radius, 0.4, 1e-12);
  EXPECT_TRUE(lbmpc::contains(unit_box(2), c.center));
}

TEST(Chebyshev, FlatSetHasZeroRadius) {
  const auto c = lbmpc::chebyshev_center(lbmpc::tighten(unit_box(2), Vector::Ones(4)));
  EXPECT_NEAR(c.radius, 0.0, 1e-12);
}

TEST(SetAlgebra, PropertiesOnRandomBoxes) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = lbmpc::testing::check_set_properties(rng, 1 + trial % 2);
    EXPECT_LE(v.sum_after_difference, 1e-8);
    EXPECT_LE(v.difference_of_sum, 1e-8);
    EXPECT_LE(v.iterated_difference, 1e-8);
    EXPECT_LE(v.linear_image, 1e-8);
  }
}

TEST(PolytopeJson, RoundTripAndSchema) {
  const HPolytope p = scaled_unit_box();
  const nlohmann::json j = p;
  EXPECT_TRUE(j.contains("A"));
  EXPECT_TRUE(j.contains("b"));
  EXPECT_EQ(j["A"].size(), 4u);
  const HPolytope q = j.get<HPolytope>();
  EXPECT_EQ(q.A(), p.A());
  EXPECT_EQ(q.b(), p.b());
  EXPECT_THROW(nlohmann::json::parse(R"({"A": [[1, 0], [1]], "b": [1, 2]})").get<HPolytope>(),
               lbmpc::PolytopeError);
}
