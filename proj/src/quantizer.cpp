#include "l2g/quantizer.hpp"

#include <stdexcept>
#include <string>

#include "l2g/kmeans.hpp"
#include "l2g/ops.hpp"

namespace l2g {

Codebook Codebook::uniform_init(std::size_t codes, std::size_t dim, Rng& rng) {
  if (codes < 2) throw std::invalid_argument("codebook: need at least 2 codes");
  if (dim < 1) throw std::invalid_argument("codebook: dim must be >= 1");
  const double bound = 1.0 / static_cast<double>(codes);
  return Codebook{Parameter("codebook", rng.uniform_tensor({codes, dim}, -bound, bound))};
}

void Codebook::warm_start(const Tensor& features, Rng& rng) {
  require_matrix(features, "codebook warm start");
  if (features.cols() != dim()) throw ShapeError("codebook warm start: feature dim mismatch");
  embeddings.value = kmeans(features, size(), rng);
  embeddings.zero_grad();
}

std::vector<std::size_t> nearest_codes(const Tensor& z, const Tensor& codes) {
  require_matrix(z, "quantize");
  require_matrix(codes, "quantize");
  if (z.cols() != codes.cols()) {
    throw ShapeError("quantize: feature dim " + std::to_string(z.cols()) +
                     " does not match codebook dim " + std::to_string(codes.cols()));
  }
  if (z.rows() == 0) throw std::invalid_argument("quantize: empty input");
  const Tensor dist = ops::pairwise_sqdist_values(z, codes);
  std::vector<std::size_t> idx(z.rows(), 0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double best = dist(i, 0);
    for (std::size_t k = 1; k < codes.rows(); ++k) {
      if (dist(i, k) < best) best = dist(i, k), idx[i] = k;
    }
  }
  return idx;
}

double quant_loss(const Tensor& z_con, const Tensor& z_dis, double beta) {
  require_same_shape(z_con, z_dis, "quant_loss");
  require_matrix(z_con, "quant_loss");
  if (z_con.rows() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < z_con.size(); ++i) {
    const double d = z_con[i] - z_dis[i];
    s += d * d;
  }
  // Both terms share the forward value; they differ only in where gradient goes.
  return (1.0 + beta) * s / static_cast<double>(z_con.rows());
}

QuantizeResult quantize(const Tensor& z_con, const Codebook& codebook, double beta) {
  QuantizeResult r;
  r.indices = nearest_codes(z_con, codebook.embeddings.value);
  const std::size_t d = codebook.dim();
  r.z_dis = Tensor({z_con.rows(), d});
  for (std::size_t i = 0; i < r.indices.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) r.z_dis(i, c) = codebook.embeddings.value(r.indices[i], c);
  r.quant_loss = quant_loss(z_con, r.z_dis, beta);
  return r;
}

Var straight_through(Var z_con, Var codebook, std::span<const std::size_t> indices) {
  const Tensor& table = codebook.value();
  const std::size_t d = table.cols();
  if (z_con.value().rows() != indices.size() || z_con.value().cols() != d) {
    throw ShapeError("straight_through: shape mismatch");
  }
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= table.rows()) throw std::out_of_range("straight_through: bad index");
    for (std::size_t c = 0; c < d; ++c) out(i, c) = table(indices[i], c);
  }
  return z_con.graph().record("straight_through", std::move(out), {z_con},
                              [z_con](Graph& g, const Tensor& go) { g.accumulate(z_con, go); });
}

Var quant_loss(Var z_con, Var codes, double beta, QuantLossMode mode) {
  require_same_shape(z_con.value(), codes.value(), "quant_loss");
  require_matrix(z_con.value(), "quant_loss");
  const double inv_rows = 1.0 / static_cast<double>(z_con.value().rows());
  if (mode == QuantLossMode::kLiteral) {
    return ops::scale(ops::sum(ops::square(ops::sub(z_con, codes))), inv_rows);
  }
  const Var codebook_term =
      ops::sum(ops::square(ops::sub(ops::stop_gradient(z_con), codes)));
  const Var commitment = ops::sum(ops::square(ops::sub(z_con, ops::stop_gradient(codes))));
  return ops::scale(ops::add(codebook_term, ops::scale(commitment, beta)), inv_rows);
}

QuantizedVars quantize(Var z_con, Var codebook, double beta, QuantLossMode mode) {
  QuantizedVars out;
  out.indices = nearest_codes(z_con.value(), codebook.value());
  out.z_dis = straight_through(z_con, codebook, out.indices);
  const Var codes = ops::gather_rows(codebook, out.indices);
  out.quant_loss = quant_loss(z_con, codes, beta, mode);
  return out;
}

std::vector<std::size_t> codebook_usage(std::span<const std::size_t> indices, std::size_t codes) {
  std::vector<std::size_t> hist(codes, 0);
  for (std::size_t i : indices) {
    if (i >= codes) {
      throw std::out_of_range("codebook_usage: index " + std::to_string(i) + " outside [0, " +
                              std::to_string(codes) + ")");
    }
    ++hist[i];
  }
  return hist;
}

}  // namespace l2g
