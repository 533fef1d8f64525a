#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "l2g/autodiff.hpp"
#include "l2g/rng.hpp"
#include "l2g/tensor.hpp"

namespace l2g {

/// K x dim table of learnable codes.
struct Codebook {
  Parameter embeddings;

  std::size_t size() const { return embeddings.value.rows(); }
  std::size_t dim() const { return embeddings.value.cols(); }

  /// Entries uniform in [-1/K, 1/K].
  static Codebook uniform_init(std::size_t codes, std::size_t dim, Rng& rng);
  /// Replaces the codes with k-means centroids of `features` (n x dim).
  void warm_start(const Tensor& features, Rng& rng);
};

enum class QuantLossMode {
  /// ||sg(z) - e||^2 + beta ||z - sg(e)||^2
  kStopGradient,
  /// ||z - e||^2 with gradient to both sides.
  kLiteral,
};

struct QuantizeResult {
  std::vector<std::size_t> indices;
  Tensor z_dis;
  double quant_loss = 0.0;
};

/// Index of the nearest code for every row; ties go to the lowest index.
std::vector<std::size_t> nearest_codes(const Tensor& z, const Tensor& codes);

/// Value-only quantisation, loss computed with the given commitment weight.
QuantizeResult quantize(const Tensor& z_con, const Codebook& codebook, double beta = 0.25);

struct QuantizedVars {
  std::vector<std::size_t> indices;
  /// Forward value equals the selected codes; gradient passes to z_con unchanged.
  Var z_dis;
  Var quant_loss;
};

/// Tape version: the codebook only receives gradient through quant_loss.
QuantizedVars quantize(Var z_con, Var codebook, double beta = 0.25,
                       QuantLossMode mode = QuantLossMode::kStopGradient);

/// Rows of `codebook` at `indices` in the forward pass, identity in the backward
/// pass onto `z_con`.
Var straight_through(Var z_con, Var codebook, std::span<const std::size_t> indices);

/// Mean over rows of the squared-distance objective; `codes` carries gradient
/// to the codebook (typically a gather_rows node).
Var quant_loss(Var z_con, Var codes, double beta, QuantLossMode mode = QuantLossMode::kStopGradient);
double quant_loss(const Tensor& z_con, const Tensor& z_dis, double beta);

/// Count of each code among `indices`.
std::vector<std::size_t> codebook_usage(std::span<const std::size_t> indices, std::size_t codes);

}  // namespace l2g
