#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "l2g/autodiff.hpp"
#include "l2g/mapper.hpp"
#include "l2g/quantizer.hpp"
#include "l2g/rng.hpp"

namespace l2g {

enum class SegLossMode { kSoftmaxCE, kSigmoidBCE };
enum class BottleneckMerge { kResidual, kReplace };

struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t classes = 3;
  /// widths[0] is the full-resolution stem; each further entry adds one
  /// stride-2 stage, so the grid shrinks by 2^(widths.size() - 1).
  std::vector<std::size_t> widths = {8, 16, 16};
  std::size_t groups = 4;  // GroupNorm groups; must divide every width
  std::size_t pre_blocks = 2;
  std::size_t post_blocks = 2;
  bool skip_connections = true;

  std::size_t codes = 64;  // K
  std::size_t code_dim = 64;
  double beta = 0.25;
  QuantLossMode quant_mode = QuantLossMode::kStopGradient;

  std::size_t anchors = 32;  // k_a
  std::size_t bins = 8;      // t
  std::size_t references = 2;  // q
  double sigma_pos = 0.3;
  double epsilon = 0.1;
  int sinkhorn_iters = 10;
  BottleneckMerge merge = BottleneckMerge::kResidual;

  SegLossMode loss_mode = SegLossMode::kSoftmaxCE;

  std::size_t depth() const { return widths.size() - 1; }
  std::size_t grid_height() const { return height >> depth(); }
  std::size_t grid_width() const { return width >> depth(); }
  std::size_t tokens() const { return grid_height() * grid_width(); }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Strict JSON mapping; unknown keys raise std::invalid_argument naming the key.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

struct ConvLayer {
  Parameter weight;  // [O, C, k, k]
  Parameter bias;    // [O]
  std::size_t stride = 1;
  std::size_t padding = 1;
};

struct UpLayer {
  Parameter weight;  // [O, 2, 2, C]
  Parameter bias;
};

struct NormLayer {
  Parameter gamma;
  Parameter beta;
};

/// conv -> group norm -> relu
struct ConvBlock {
  ConvLayer conv;
  NormLayer norm;
};

struct ForwardDiagnostics {
  std::vector<std::size_t> code_usage;       // histogram over the codebook
  std::vector<double> transport_residuals;   // one per reference
};

struct ForwardResult {
  Var logits;      // [classes, H, W]
  Var quant_loss;  // scalar
  std::vector<std::size_t> code_indices;
  std::vector<Var> plans;
  ForwardDiagnostics diagnostics;
};

/// Code assignment recorded at a base point. Forwarding with it replaces the
/// quantiser by z_dis = z_con + offset with fixed indices, a smooth surrogate
/// whose exact derivative is the straight-through gradient. Used to check
/// end-to-end gradients by finite differences.
struct FrozenQuantization {
  std::vector<std::size_t> indices;
  Tensor offset;  // codes[indices] - z_con at the base point
};

class SegModel {
 public:
  SegModel(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  /// Every trainable parameter in a fixed order (optimizer and checkpoint key).
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  /// Records the full pipeline for one image [C, H, W] on `g`.
  ForwardResult forward(Graph& g, const Tensor& image, const FrozenQuantization* frozen = nullptr);
  FrozenQuantization freeze_quantization(const Tensor& image);
  /// Encoder features before quantisation, n x code_dim (value only).
  Tensor encode(const Tensor& image);

  /// Data-driven initialisation from a few images: k-means codebook on encoder
  /// outputs, Nystrom anchors drawn from the resulting codes with a
  /// median-heuristic bandwidth.
  void warm_start(std::span<const Tensor> images, Rng& rng);

  Codebook& codebook() { return codebook_; }
  NystromEmbedding& nystrom() { return nystrom_; }
  ReferenceSet& references() { return references_; }

 private:
  Var conv_block(Graph& g, Var x, ConvBlock& block);
  Var encode_var(Graph& g, const Tensor& image, std::vector<Var>* skips);

  ModelConfig config_;
  ConvBlock stem_;
  std::vector<ConvBlock> down_;
  std::vector<ConvBlock> pre_;
  ConvLayer project_;
  Codebook codebook_;
  NystromEmbedding nystrom_;
  ReferenceSet references_;
  Parameter respatial_rows_;  // n x (q t)
  Parameter respatial_cols_;  // k_a x code_dim
  std::vector<ConvBlock> post_;
  std::vector<UpLayer> up_;
  std::vector<ConvBlock> fuse_;
  ConvLayer head_;
};

/// Cross-entropy term (softmax CE, or per-class sigmoid BCE) plus
/// (1 - soft Dice over foreground classes) plus quant_loss.
Var seg_loss(Var logits, std::span<const std::uint8_t> labels, Var quant_loss,
             SegLossMode mode = SegLossMode::kSoftmaxCE);

/// Per-pixel argmax over classes of [K, H, W]; ties go to the lowest class.
std::vector<std::uint8_t> predict_labels(const Tensor& logits);
std::vector<std::uint8_t> predict(SegModel& model, const Tensor& image);

}  // namespace l2g
