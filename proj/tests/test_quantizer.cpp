#include <doctest.h>

#include <algorithm>
#include <limits>

#include "l2g/ops.hpp"
#include "l2g/quantizer.hpp"
#include "l2g/rng.hpp"

using namespace l2g;

namespace {

std::vector<std::size_t> brute_force_nearest(const Tensor& z, const Tensor& e) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < e.rows(); ++k) {
      double d = 0.0;
      for (std::size_t c = 0; c < z.cols(); ++c) d += (z(i, c) - e(k, c)) * (z(i, c) - e(k, c));
      if (d < best_d) best_d = d, best = k;
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace

TEST_CASE("exact match selects that code with zero loss") {
  Rng rng(1);
  const Codebook cb = Codebook::uniform_init(6, 3, rng);
  Tensor z({1, 3});
  for (std::size_t c = 0; c < 3; ++c) z(0, c) = cb.embeddings.value(3, c);
  const QuantizeResult r = quantize(z, cb);
  CHECK(r.indices == std::vector<std::size_t>{3});
  CHECK(r.quant_loss == 0.0);
}

TEST_CASE("ties go to the lowest index") {
  Codebook cb{Parameter("codebook", Tensor::matrix({{5, 5}, {1, 0}, {-1, 0}}))};
  CHECK(quantize(Tensor::matrix({{0, 0}}), cb).indices == std::vector<std::size_t>{1});
}

TEST_CASE("indices match exhaustive search") {
  Rng rng(3);
  {
    const Tensor z = rng.normal_tensor({7, 4});
    const Tensor e = rng.normal_tensor({5, 4});
    CHECK(nearest_codes(z, e) == brute_force_nearest(z, e));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(40), k = 2 + rng.below(30), d = 1 + rng.below(16);
    const Tensor z = rng.normal_tensor({n, d});
    const Tensor e = rng.normal_tensor({k, d});
    CHECK(nearest_codes(z, e) == brute_force_nearest(z, e));
  }
}

TEST_CASE("quantize rejects bad input") {
  Rng rng(4);
  const Codebook cb = Codebook::uniform_init(4, 3, rng);
  CHECK_THROWS_AS(quantize(Tensor({2, 2}), cb), ShapeError);
  CHECK_THROWS_AS(quantize(Tensor({0, 3}), cb), std::invalid_argument);
  CHECK_THROWS_AS(Codebook::uniform_init(1, 3, rng), std::invalid_argument);
  CHECK_THROWS_AS(Codebook::uniform_init(4, 0, rng), std::invalid_argument);
}

TEST_CASE("uniform init stays inside the VQ range") {
  Rng rng(5);
  const Codebook cb = Codebook::uniform_init(16, 8, rng);
  for (double v : cb.embeddings.value.data()) CHECK(std::abs(v) <= 1.0 / 16.0);
}

TEST_CASE("quantisation loss values") {
  const Tensor z = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(quant_loss(z, z, 0.25) == 0.0);
  CHECK(quant_loss(Tensor::matrix({{0, 0}}), Tensor::matrix({{3, 4}}), 0.0) == 25.0);

  Rng rng(6);
  const Tensor a = rng.normal_tensor({9, 5}), b = rng.normal_tensor({9, 5});
  double first = 0.0, second = 0.0;
  for (std::size_t i = 0; i < 9; ++i) {
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      d1 += (a(i, c) - b(i, c)) * (a(i, c) - b(i, c));
      d2 += (a(i, c) - b(i, c)) * (a(i, c) - b(i, c));
    }
    first += d1;
    second += 0.25 * d2;
  }
  const double expected = (first + second) / 9.0;
  CHECK(std::abs(quant_loss(a, b, 0.25) - expected) < 1e-12);

  Graph g;
  const Var tape = quant_loss(g.constant(a), g.constant(b), 0.25);
  CHECK(std::abs(tape.value().item() - expected) < 1e-12);
  CHECK_THROWS_AS(quant_loss(a, rng.normal_tensor({9, 4}), 0.25), ShapeError);
}

TEST_CASE("loss is nonnegative and zero only on codes") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Codebook cb = Codebook::uniform_init(8, 3, rng);
    const QuantizeResult r = quantize(rng.normal_tensor({6, 3}), cb, rng.uniform());
    CHECK(r.quant_loss > 0.0);
    CHECK(quantize(r.z_dis, cb, rng.uniform()).quant_loss == 0.0);
  }
}

TEST_CASE("quantising codebook rows is idempotent") {
  Rng rng(8);
  const Codebook cb = Codebook::uniform_init(10, 4, rng);
  const QuantizeResult r = quantize(rng.normal_tensor({12, 4}), cb);
  const QuantizeResult again = quantize(r.z_dis, cb);
  CHECK(again.z_dis == r.z_dis);
  CHECK(again.indices == r.indices);
  CHECK(quantize(cb.embeddings.value, cb).z_dis == cb.embeddings.value);
}

TEST_CASE("straight-through passes gradient unchanged") {
  Rng rng(9);
  Parameter z("z", rng.normal_tensor({5, 3}));
  Codebook cb = Codebook::uniform_init(4, 3, rng);
  const Tensor probe = rng.normal_tensor({5, 3});
  Graph g;
  const QuantizedVars q = quantize(g.parameter(z), g.parameter(cb.embeddings));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(q.z_dis.value()(i, c) == cb.embeddings.value(q.indices[i], c));
  // L = <probe, z_dis^2>, so dL/dz_dis = 2 probe * z_dis.
  const Var loss = ops::dot(ops::square(q.z_dis), g.constant(probe));
  g.backward(loss);
  for (std::size_t i = 0; i < z.value.size(); ++i) {
    CHECK(z.grad[i] == 2.0 * probe[i] * q.z_dis.value()[i]);
  }
  // The codebook receives nothing from the task loss.
  for (double v : cb.embeddings.grad.data()) CHECK(v == 0.0);
}

TEST_CASE("stop-gradient loss routes the two terms separately") {
  Rng rng(10);
  Parameter z("z", rng.normal_tensor({4, 2}));
  Codebook cb = Codebook::uniform_init(3, 2, rng);
  const double beta = 0.25;
  Graph g;
  const QuantizedVars q = quantize(g.parameter(z), g.parameter(cb.embeddings), beta);
  g.backward(q.quant_loss);
  const double n = 4.0;
  Tensor expected_codebook_grad({3, 2});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      const double diff = z.value(i, c) - cb.embeddings.value(q.indices[i], c);
      CHECK(z.grad(i, c) == doctest::Approx(2.0 * beta * diff / n).epsilon(1e-12));
      expected_codebook_grad(q.indices[i], c) += -2.0 * diff / n;
    }
  CHECK(max_abs_diff(cb.embeddings.grad, expected_codebook_grad) < 1e-12);
}

TEST_CASE("literal loss sends the same gradient to both sides") {
  Rng rng(11);
  Parameter z("z", rng.normal_tensor({3, 2}));
  Codebook cb = Codebook::uniform_init(3, 2, rng);
  Graph g;
  const QuantizedVars q =
      quantize(g.parameter(z), g.parameter(cb.embeddings), 0.25, QuantLossMode::kLiteral);
  g.backward(q.quant_loss);
  Tensor code_sum({3, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      const double diff = z.value(i, c) - cb.embeddings.value(q.indices[i], c);
      CHECK(z.grad(i, c) == doctest::Approx(2.0 * diff / 3.0).epsilon(1e-12));
      code_sum(q.indices[i], c) -= z.grad(i, c);
    }
  CHECK(max_abs_diff(cb.embeddings.grad, code_sum) < 1e-12);
}

TEST_CASE("codebook usage histogram") {
  const std::vector<std::size_t> zeros(9, 0);
  const auto h = codebook_usage(zeros, 4);
  CHECK(h == std::vector<std::size_t>{9, 0, 0, 0});
  CHECK(codebook_usage({}, 3) == std::vector<std::size_t>(3, 0));

  Rng rng(12);
  std::vector<std::size_t> idx(500);
  for (auto& i : idx) i = rng.below(17);
  const auto hist = codebook_usage(idx, 17);
  std::size_t total = 0;
  for (std::size_t k = 0; k < 17; ++k) {
    CHECK(hist[k] == static_cast<std::size_t>(std::count(idx.begin(), idx.end(), k)));
    total += hist[k];
  }
  CHECK(total == idx.size());
  idx.push_back(17);
  CHECK_THROWS_AS(codebook_usage(idx, 17), std::out_of_range);
}

TEST_CASE("warm start places codes on well separated clusters") {
  Rng rng(13);
  Tensor pts({40, 2});
  const double centers[4][2] = {{0, 0}, {10, 0}, {0, 10}, {10, 10}};
  for (std::size_t i = 0; i < 40; ++i) {
    pts(i, 0) = centers[i % 4][0] + 0.01 * rng.normal();
    pts(i, 1) = centers[i % 4][1] + 0.01 * rng.normal();
  }
  Codebook cb = Codebook::uniform_init(4, 2, rng);
  cb.warm_start(pts, rng);
  const auto usage = codebook_usage(quantize(pts, cb).indices, 4);
  CHECK(usage == std::vector<std::size_t>(4, 10));
}
