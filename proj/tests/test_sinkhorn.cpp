#include <doctest.h>

#include <cmath>

#include "l2g/gradcheck.hpp"
#include "l2g/ops.hpp"
#include "l2g/rng.hpp"
#include "l2g/sinkhorn.hpp"
#include "oracles.hpp"

using namespace l2g;

namespace {

Tensor normalized_cost(Rng& rng, std::size_t n, std::size_t t) {
  Tensor c = rng.uniform_tensor({n, t}, -1.0, 1.0);
  double mx = 0.0;
  for (double v : c.data()) mx = std::max(mx, std::abs(v));
  for (double& v : c.data()) v /= mx;
  return c;
}

OtProblem uniform_problem(Tensor cost, double eps, int iters = 10) {
  OtProblem p;
  p.a = uniform_marginal(cost.rows());
  p.b = uniform_marginal(cost.cols());
  p.cost = std::move(cost);
  p.epsilon = eps;
  p.iterations = iters;
  return p;
}

Tensor outer(const Tensor& a, const Tensor& b) {
  Tensor o({a.size(), b.size()});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) o(i, j) = a[i] * b[j];
  return o;
}

}  // namespace

TEST_CASE("constant cost gives the independent coupling") {
  OtProblem p;
  p.cost = Tensor({3, 5}, 0.7);
  p.a = Tensor::vector({0.2, 0.5, 0.3});
  p.b = Tensor::vector({0.1, 0.2, 0.3, 0.25, 0.15});
  for (double eps : {0.01, 0.1, 1.0, 100.0}) {
    p.epsilon = eps;
    CHECK(max_abs_diff(sinkhorn_solve(p).plan, outer(p.a, p.b)) < 1e-12);
  }
}

TEST_CASE("single coupling") {
  const TransportPlan t = sinkhorn_solve(uniform_problem(Tensor({1, 1}, 3.0), 0.1));
  CHECK(t.plan(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t.marginal_residual < 1e-15);
}

TEST_CASE("2x2 anti-diagonal cost matches the brute-force LP coupling") {
  const Tensor cost = Tensor::matrix({{0, 1}, {1, 0}});
  // Oracle: search the one-parameter family of admissible couplings.
  double best_x = 0.0, best = 1e300;
  for (int k = 0; k <= 5000; ++k) {
    const double x = 0.5 * k / 5000.0;
    const Tensor t = oracle::two_by_two_coupling(x);
    double c = 0.0;
    for (std::size_t i = 0; i < 4; ++i) c += t[i] * cost[i];
    if (c < best) best = c, best_x = x;
  }
  const TransportPlan plan = sinkhorn_converge(uniform_problem(cost, 0.01), 1e-9, 10000);
  CHECK(plan.marginal_residual < 1e-9);
  CHECK(max_abs_diff(plan.plan, oracle::two_by_two_coupling(best_x)) < 1e-3);
}

TEST_CASE("entropy values and maximality at the independent coupling") {
  const Tensor uniform = Tensor({2, 2}, 0.25);
  CHECK(entropy(uniform) == doctest::Approx(oracle::direct_entropy(uniform)).epsilon(1e-15));
  CHECK(entropy(uniform) == doctest::Approx(std::log(4.0) + 1.0));
  // Point mass: 0 log 0 := 0 leaves -1 * (log 1 - 1) = 1.
  CHECK(entropy(Tensor::matrix({{1, 0}, {0, 0}})) == doctest::Approx(1.0));
  double best_x = -1.0, best_h = -1e300;
  for (int k = 0; k <= 1000; ++k) {
    const double x = 0.5 * k / 1000.0;
    const double h = entropy(oracle::two_by_two_coupling(x));
    if (h > best_h) best_h = h, best_x = x;
  }
  CHECK(best_x == doctest::Approx(0.25));
  CHECK_THROWS_AS(entropy(Tensor::matrix({{-0.1, 1.1}})), NumericalError);
}

TEST_CASE("transport cost") {
  Rng rng(2);
  const Tensor m = rng.normal_tensor({3, 4});
  TransportPlan zero_cost_plan{outer(uniform_marginal(3), uniform_marginal(4)), 0.0};
  CHECK(transport_cost(zero_cost_plan, Tensor({3, 4})) == 0.0);

  const Tensor a = Tensor::vector({0.2, 0.3, 0.5}), b = Tensor::vector({0.1, 0.2, 0.3, 0.4});
  double expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j) row += b[j] * m(i, j);
    expected += a[i] * row;
  }
  CHECK(transport_cost({outer(a, b), 0.0}, m) == doctest::Approx(expected).epsilon(1e-14));

  const Tensor sq = rng.normal_tensor({3, 3});
  Tensor perm({3, 3});
  perm(0, 0) = perm(1, 1) = perm(2, 2) = 1.0 / 3.0;
  CHECK(transport_cost({perm, 0.0}, sq) ==
        doctest::Approx((sq(0, 0) + sq(1, 1) + sq(2, 2)) / 3.0));
  CHECK_THROWS_AS(transport_cost({perm, 0.0}, m), ShapeError);
}

TEST_CASE("marginals converge on random problems") {
  // Near-degenerate 2x2 instances converge at roughly 0.25/k, so the cap is generous.
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(16), t = 1 + rng.below(16);
    const double eps = 0.05 + rng.uniform() * 0.5;
    const TransportPlan plan = sinkhorn_converge(uniform_problem(normalized_cost(rng, n, t), eps),
                                                 1e-10, 2000000);
    CHECK(plan.marginal_residual < 1e-6);
    for (double v : plan.plan.data()) CHECK(v >= 0.0);
    double mass = 0.0;
    for (double v : plan.plan.data()) mass += v;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("fixed iteration and convergence modes agree after equal steps") {
  Rng rng(4);
  const OtProblem p = uniform_problem(normalized_cost(rng, 6, 4), 0.1, 10);
  const TransportPlan fixed = sinkhorn_solve(p);
  const TransportPlan conv = sinkhorn_converge(p, 0.0, 10);
  CHECK(max_abs_diff(fixed.plan, conv.plan) < 1e-13);
}

TEST_CASE("large epsilon approaches the independent coupling at rate 1/eps") {
  Rng rng(9);
  for (std::size_t n : {2, 5, 16}) {
    const Tensor cost = normalized_cost(rng, n, n);
    const Tensor ab = outer(uniform_marginal(n), uniform_marginal(n));
    const double d100 = max_abs_diff(sinkhorn_converge(uniform_problem(cost, 1e2), 1e-15, 500).plan, ab);
    const double d1e4 = max_abs_diff(sinkhorn_converge(uniform_problem(cost, 1e4), 1e-15, 500).plan, ab);
    const double d1e6 = max_abs_diff(sinkhorn_converge(uniform_problem(cost, 1e6), 1e-15, 500).plan, ab);
    CHECK(d1e6 < 1e-6);
    CHECK(d100 / d1e4 == doctest::Approx(100.0).epsilon(0.05));
  }
}

TEST_CASE("small epsilon approaches the LP optimum") {
  Rng rng(31);
  for (std::size_t n : {2, 3, 4}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor cost = rng.uniform_tensor({n, n}, 0.0, 1.0);
      const double opt = oracle::permutation_lp_optimum(cost);
      const TransportPlan plan = sinkhorn_converge(uniform_problem(cost, 1e-3), 1e-9, 200000);
      CHECK(std::abs(transport_cost(plan, cost) - opt) <= 0.02 * std::abs(opt));
    }
  }
}

TEST_CASE("shifting the cost by a constant leaves the plan unchanged") {
  Rng rng(12);
  const Tensor cost = normalized_cost(rng, 7, 5);
  Tensor shifted = cost;
  for (double& v : shifted.data()) v += 0.37;
  const TransportPlan a = sinkhorn_solve(uniform_problem(cost, 0.1));
  const TransportPlan b = sinkhorn_solve(uniform_problem(shifted, 0.1));
  CHECK(max_abs_diff(a.plan, b.plan) < 1e-10);
}

TEST_CASE("gradient through unrolled sinkhorn matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(6), t = 2 + rng.below(6);
    Parameter cost("cost", normalized_cost(rng, n, t));
    const Tensor probe = rng.normal_tensor({n, t});
    auto loss = [&](Graph& g) {
      const Var plan = sinkhorn(g.parameter(cost), uniform_marginal(n), uniform_marginal(t), 0.1, 10);
      return ops::dot(plan, g.constant(probe));
    };
    const GradCheckReport r = grad_check(loss, {&cost}, {1e-5, 1e-4});
    CHECK(r.passed());
  }
}

TEST_CASE("problem validation") {
  OtProblem p = uniform_problem(Tensor({2, 2}, 0.0), 0.1);
  p.epsilon = 0.0;
  CHECK_THROWS_AS(sinkhorn_solve(p), std::invalid_argument);
  p.epsilon = 0.1;
  p.a = Tensor::vector({0.6, 0.6});
  CHECK_THROWS_AS(sinkhorn_solve(p), std::invalid_argument);
  p.a = uniform_marginal(3);
  CHECK_THROWS_AS(sinkhorn_solve(p), ShapeError);
  p.a = uniform_marginal(2);
  p.cost(0, 1) = std::nan("");
  CHECK_THROWS_AS(sinkhorn_solve(p), NumericalError);
  p.cost = Tensor::matrix({{0, 1}, {1, 0}});
  p.epsilon = 1e-310;
  CHECK_THROWS_AS(sinkhorn_solve(p), NumericalError);
}
