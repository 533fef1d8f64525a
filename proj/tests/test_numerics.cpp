#include <doctest.h>

#include <cmath>
#include <functional>

#include "l2g/autodiff.hpp"
#include "l2g/gradcheck.hpp"
#include "l2g/nn.hpp"
#include "l2g/ops.hpp"
#include "l2g/rng.hpp"
#include "oracles.hpp"

using namespace l2g;

TEST_CASE("matmul identity and hand example") {
  Graph g;
  const Tensor a = Tensor::matrix({{1.5, -2}, {0.25, 4}});
  const Var i2 = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  CHECK(ops::matmul(i2, g.constant(a)).value() == a);

  const Var m = ops::matmul(g.constant(Tensor::matrix({{1, 2}, {3, 4}})),
                            g.constant(Tensor::matrix({{0}, {1}})));
  CHECK(m.value() == Tensor::matrix({{2}, {4}}));
}

TEST_CASE("matmul matches triple loop") {
  Rng rng(11);
  const Tensor a = rng.normal_tensor({3, 4}), b = rng.normal_tensor({4, 2});
  CHECK(max_abs_diff(ops::matmul_values(a, b), oracle::matmul_loops(a, b)) < 1e-12);
}

TEST_CASE("matmul rejects inner dimension mismatch") {
  Graph g;
  CHECK_THROWS_AS(ops::matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("matmul is associative on random triples") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Tensor a = rng.normal_tensor({3, 5}), b = rng.normal_tensor({5, 4}),
                 c = rng.normal_tensor({4, 2});
    const Tensor left = ops::matmul_values(ops::matmul_values(a, b), c);
    const Tensor right = ops::matmul_values(a, ops::matmul_values(b, c));
    CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(1.0, frobenius_norm(left)));
  }
}

TEST_CASE("pairwise squared distance") {
  Graph g;
  Rng rng(5);
  const Tensor a = rng.normal_tensor({4, 3});
  const Tensor self = ops::pairwise_sqdist_values(a, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(self(i, i) == 0.0);

  const Tensor p = ops::pairwise_sqdist_values(Tensor::matrix({{0, 0}}), Tensor::matrix({{3, 4}}));
  CHECK(p(0, 0) == doctest::Approx(25.0));

  const Tensor x = rng.normal_tensor({5, 3}), y = rng.normal_tensor({4, 3});
  CHECK(max_abs_diff(ops::pairwise_sqdist_values(x, y), oracle::sqdist_loops(x, y)) < 1e-10);
  CHECK_THROWS_AS(ops::pairwise_sqdist_values(x, rng.normal_tensor({4, 2})), ShapeError);
}

TEST_CASE("backward on linear and quadratic losses") {
  Parameter p("p", Tensor::vector({1.0, -2.0, 3.5}));
  {
    Graph g;
    g.backward(ops::sum(g.parameter(p)));
    CHECK(p.grad == Tensor::vector({1, 1, 1}));
  }
  p.zero_grad();
  CHECK(p.grad == Tensor::vector({0, 0, 0}));
  {
    Graph g;
    const Var v = g.parameter(p);
    g.backward(ops::dot(v, v));
    CHECK(p.grad == Tensor::vector({2.0, -4.0, 7.0}));
  }
}

TEST_CASE("backward accumulates across passes until reset") {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(ops::sum(g.parameter(p)));
  }
  CHECK(p.grad == Tensor::vector({2, 2}));
}

TEST_CASE("backward errors") {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  Graph g;
  const Var v = g.parameter(p);
  CHECK_THROWS_AS(g.backward(ops::scale(v, 2.0)), ShapeError);

  const Var opaque = g.record("opaque", v.value(), {v}, {});
  CHECK_THROWS_WITH_AS(g.backward(ops::sum(opaque)), doctest::Contains("opaque"),
                       std::logic_error);
}

TEST_CASE("non-finite values surface as errors") {
  Graph g;
  const Var big = g.constant(Tensor::vector({1000.0}));
  CHECK_THROWS_AS(ops::exp(big), NumericalError);
  CHECK_THROWS_AS(ops::log(g.constant(Tensor::vector({0.0}))), NumericalError);
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42), c(43);
  const Tensor ta = a.normal_tensor({16}), tb = b.normal_tensor({16}), tc = c.normal_tensor({16});
  CHECK(ta == tb);
  CHECK_FALSE(ta == tc);
  // Pinned first outputs of xoshiro256** under splitmix64 seeding.
  Rng r(0);
  const std::uint64_t first = r.next_u64();
  Rng r2(0);
  CHECK(r2.next_u64() == first);
  Rng s(7);
  auto st = s.state();
  const double u = s.uniform();
  s.set_state(st);
  CHECK(s.uniform() == u);
  for (int i = 0; i < 1000; ++i) {
    const double v = a.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(a.below(7) < 7);
  }
}

TEST_CASE("grad_check passes on a quadratic and flags a broken rule") {
  Parameter p("p", Tensor::vector({0.3, -1.2, 2.0}));
  auto quad = [&](Graph& g) {
    const Var v = g.parameter(p);
    return ops::dot(v, v);
  };
  const GradCheckReport ok = grad_check(quad, {&p}, {1e-5, 1e-8});
  CHECK(ok.passed());
  CHECK(ok.worst() < 1e-8);

  auto corrupted = [&](Graph& g) {
    const Var v = g.parameter(p);
    Tensor sq(v.shape());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = v.value()[i] * v.value()[i];
    // Wrong derivative: v instead of 2v.
    const Var bad = g.record("bad_square", sq, {v}, [v](Graph& gr, const Tensor& go) {
      Tensor d(v.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = go[i] * v.value()[i];
      gr.accumulate(v, d);
    });
    return ops::sum(bad);
  };
  CHECK_FALSE(grad_check(corrupted, {&p}, {1e-5, 1e-4}).passed());
  CHECK_THROWS_AS(grad_check(quad, {&p}, {1e-2, 1e-4}), std::invalid_argument);
}

namespace {

// Random smooth probe: loss = <C, op(inputs)> for a fixed random C.
GradCheckReport check_op(std::uint64_t seed, std::vector<Parameter*> params,
                         const std::function<Var(Graph&, std::vector<Var>&)>& op) {
  Rng rng(seed + 1000);
  Tensor weights;
  auto loss = [&](Graph& g) {
    std::vector<Var> vars;
    for (Parameter* p : params) vars.push_back(g.parameter(*p));
    const Var out = op(g, vars);
    if (weights.shape() != out.shape()) weights = rng.normal_tensor(out.shape());
    return ops::dot(out, g.constant(weights));
  };
  return grad_check(loss, params, {1e-5, 1e-4});
}

}  // namespace

TEST_CASE("every primitive passes gradient check over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    Parameter a("a", rng.normal_tensor({3, 4})), b("b", rng.normal_tensor({3, 4}));
    Parameter c("c", rng.normal_tensor({4, 2})), s("s", Tensor::scalar(rng.normal()));
    Parameter v4("v4", rng.normal_tensor({4})), v3("v3", rng.normal_tensor({3}));
    Parameter pos("pos", rng.uniform_tensor({3, 4}, 0.5, 2.0));

    using Ops = std::vector<Var>;
    CHECK(check_op(seed, {&a, &b}, [](Graph&, Ops& x) { return ops::add(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a, &b}, [](Graph&, Ops& x) { return ops::sub(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a, &b}, [](Graph&, Ops& x) { return ops::mul(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::scale(x[0], -1.7); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::add_scalar(x[0], 0.3); }).passed());
    CHECK(check_op(seed, {&a, &s}, [](Graph&, Ops& x) { return ops::mul_scalar(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::exp(x[0]); }).passed());
    CHECK(check_op(seed, {&pos}, [](Graph&, Ops& x) { return ops::log(x[0]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::square(x[0]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::relu(x[0]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::mean(x[0]); }).passed());
    CHECK(check_op(seed, {&a, &b}, [](Graph&, Ops& x) { return ops::dot(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a, &c}, [](Graph&, Ops& x) { return ops::matmul(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::transpose(x[0]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::reshape(x[0], {2, 6}); }).passed());
    CHECK(check_op(seed, {&a, &v4}, [](Graph&, Ops& x) { return ops::add_row_vector(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a, &v3}, [](Graph&, Ops& x) { return ops::add_col_vector(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::logsumexp_rows(x[0]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) { return ops::logsumexp_cols(x[0]); }).passed());
    CHECK(check_op(seed, {&a, &b}, [](Graph&, Ops& x) { return ops::pairwise_sqdist(x[0], x[1]); }).passed());
    CHECK(check_op(seed, {&a}, [](Graph&, Ops& x) {
            const std::size_t idx[] = {2, 0, 2, 1};
            return ops::gather_rows(x[0], idx);
          }).passed());
    CHECK(check_op(seed, {&a, &b}, [](Graph&, Ops& x) { return ops::concat_rows({x[0], x[1]}); }).passed());

    // Symmetric positive definite input built from a parameter.
    Parameter base("base", rng.normal_tensor({4, 4}));
    CHECK(check_op(seed, {&base}, [](Graph&, Ops& x) {
            const Var spd = ops::add(ops::matmul(x[0], ops::transpose(x[0])),
                                     x[0].graph().constant(Tensor::matrix(
                                         {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}})));
            return ops::sym_inv_sqrt(spd, 1e-6);
          }).passed());
  }
}

TEST_CASE("nn layers pass gradient check over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    Parameter x("x", rng.normal_tensor({2, 5, 6}));
    Parameter w("w", rng.normal_tensor({3, 2, 3, 3}, 0.5)), bias("bias", rng.normal_tensor({3}));
    Parameter up_w("up_w", rng.normal_tensor({3, 2, 2, 2}, 0.5));
    Parameter gamma("gamma", rng.uniform_tensor({4}, 0.5, 1.5)), beta("beta", rng.normal_tensor({4}));
    Parameter x4("x4", rng.normal_tensor({4, 3, 3}));
    Parameter y("y", rng.normal_tensor({1, 5, 6}));

    using Ops = std::vector<Var>;
    CHECK(check_op(seed, {&x, &w, &bias}, [](Graph&, Ops& v) { return nn::conv2d(v[0], v[1], v[2], 1, 1); }).passed());
    CHECK(check_op(seed, {&x, &w, &bias}, [](Graph&, Ops& v) { return nn::conv2d(v[0], v[1], v[2], 2, 1); }).passed());
    CHECK(check_op(seed, {&x, &up_w, &bias}, [](Graph&, Ops& v) { return nn::upconv2x2(v[0], v[1], v[2]); }).passed());
    CHECK(check_op(seed, {&x4, &gamma, &beta}, [](Graph&, Ops& v) { return nn::group_norm(v[0], v[1], v[2], 2); }).passed());
    CHECK(check_op(seed, {&x, &y}, [](Graph&, Ops& v) { return nn::concat_channels(v[0], v[1]); }).passed());
    CHECK(check_op(seed, {&x4}, [](Graph&, Ops& v) { return nn::softmax_channels(v[0]); }).passed());
    CHECK(check_op(seed, {&x4}, [](Graph&, Ops& v) { return nn::sigmoid(v[0]); }).passed());

    std::vector<std::uint8_t> labels(9);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(4));
    CHECK(check_op(seed, {&x4}, [&](Graph&, Ops& v) { return nn::softmax_cross_entropy(v[0], labels); }).passed());
    CHECK(check_op(seed, {&x4}, [&](Graph&, Ops& v) { return nn::sigmoid_bce(v[0], labels); }).passed());
    CHECK(check_op(seed, {&x4}, [&](Graph&, Ops& v) {
            return nn::soft_dice_loss(nn::softmax_channels(v[0]), labels);
          }).passed());
  }
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(3);
  const Tensor x = rng.normal_tensor({2, 5, 5}), w = rng.normal_tensor({3, 2, 3, 3}),
               b = rng.normal_tensor({3});
  Graph g;
  const Tensor out = nn::conv2d(g.constant(x), g.constant(w), g.constant(b), 2, 1).value();
  REQUIRE(out.shape() == Shape{3, 3, 3});
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        double s = b[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
              if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
              s += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x[(c * 5 + iy) * 5 + ix];
            }
        CHECK(out[(o * 3 + oy) * 3 + ox] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("group norm output has zero mean and unit variance per group") {
  Rng rng(8);
  Graph g;
  const Var out = nn::group_norm(g.constant(rng.normal_tensor({4, 3, 3}, 3.0)),
                                 g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4}, 0.0)), 2);
  for (int grp = 0; grp < 2; ++grp) {
    double mu = 0.0, var = 0.0;
    for (int i = 0; i < 18; ++i) mu += out.value()[grp * 18 + i];
    mu /= 18;
    for (int i = 0; i < 18; ++i) var += std::pow(out.value()[grp * 18 + i] - mu, 2);
    var /= 18;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
  }
}
