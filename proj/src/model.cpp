#include "l2g/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "l2g/nn.hpp"
#include "l2g/ops.hpp"

namespace l2g {

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  need(height >= 1 && width >= 1 && channels >= 1, "height, width and channels must be >= 1");
  need(classes >= 2 && classes <= 255, "classes must be in [2, 255]");
  need(!widths.empty(), "widths must not be empty");
  need(groups >= 1, "groups must be >= 1");
  for (std::size_t w : widths) {
    need(w >= 1, "every width must be >= 1");
    need(w % groups == 0, "groups (" + std::to_string(groups) + ") must divide width " + std::to_string(w));
  }
  const std::size_t f = std::size_t{1} << depth();
  need(height % f == 0 && width % f == 0,
       "height and width must be divisible by 2^depth = " + std::to_string(f));
  need(codes >= 2, "codes must be >= 2");
  need(code_dim >= 1, "code_dim must be >= 1");
  need(beta >= 0.0, "beta must be >= 0");
  need(anchors >= 1 && bins >= 1 && references >= 1, "anchors, bins and references must be >= 1");
  need(sigma_pos > 0.0, "sigma_pos must be > 0");
  need(epsilon > 0.0, "epsilon must be > 0");
  need(sinkhorn_iters >= 1, "sinkhorn_iters must be >= 1");
}

namespace {

ConvLayer make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                    std::size_t stride, std::size_t pad, Rng& rng, double gain = 2.0) {
  const double std_dev = std::sqrt(gain / static_cast<double>(in * k * k));
  return ConvLayer{Parameter(name + ".weight", rng.normal_tensor({out, in, k, k}, std_dev)),
                   Parameter(name + ".bias", Tensor({out})), stride, pad};
}

NormLayer make_norm(const std::string& name, std::size_t channels) {
  return NormLayer{Parameter(name + ".gamma", Tensor({channels}, 1.0)),
                   Parameter(name + ".beta", Tensor({channels}))};
}

ConvBlock make_block(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                     Rng& rng) {
  return ConvBlock{make_conv(name + ".conv", in, out, 3, stride, 1, rng), make_norm(name + ".norm", out)};
}

}  // namespace

SegModel::SegModel(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const auto& w = config_.widths;
  const std::size_t depth = config_.depth();
  stem_ = make_block("encoder.stem", config_.channels, w[0], 1, rng);
  for (std::size_t s = 1; s <= depth; ++s)
    down_.push_back(make_block("encoder.down" + std::to_string(s), w[s - 1], w[s], 2, rng));
  for (std::size_t b = 0; b < config_.pre_blocks; ++b)
    pre_.push_back(make_block("pre." + std::to_string(b), w[depth], w[depth], 1, rng));
  project_ = make_conv("project", w[depth], config_.code_dim, 1, 1, 0, rng, 1.0);

  codebook_ = Codebook::uniform_init(config_.codes, config_.code_dim, rng);
  nystrom_ = NystromEmbedding::from_batch(codebook_.embeddings.value, config_.anchors, rng);
  ReferenceOptions ro;
  ro.bins = config_.bins;
  ro.dim = config_.anchors;
  ro.count = config_.references;
  ro.sigma_pos = config_.sigma_pos;
  ro.epsilon = config_.epsilon;
  ro.iterations = config_.sinkhorn_iters;
  references_ = init_references(ReferenceInit::kRandomUnit, rng, ro);

  const std::size_t qt = config_.references * config_.bins;
  respatial_rows_ = Parameter("respatial.rows",
                              rng.normal_tensor({config_.tokens(), qt}, 1.0 / std::sqrt(double(qt))));
  respatial_cols_ = Parameter("respatial.cols", rng.normal_tensor({config_.anchors, config_.code_dim},
                                                                  1.0 / std::sqrt(double(config_.anchors))));

  for (std::size_t b = 0; b < config_.post_blocks; ++b) {
    const std::size_t in = b == 0 ? config_.code_dim : w[depth];
    post_.push_back(make_block("post." + std::to_string(b), in, w[depth], 1, rng));
  }
  for (std::size_t s = depth; s >= 1; --s) {
    const std::string tag = std::to_string(s);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(w[s] * 4));
    up_.push_back(UpLayer{Parameter("decoder.up" + tag + ".weight", rng.normal_tensor({w[s - 1], 2, 2, w[s]}, std_dev)),
                          Parameter("decoder.up" + tag + ".bias", Tensor({w[s - 1]}))});
    const std::size_t in = config_.skip_connections ? 2 * w[s - 1] : w[s - 1];
    fuse_.push_back(make_block("decoder.fuse" + tag, in, w[s - 1], 1, rng));
  }
  // When there are no post blocks the decoder starts from code_dim channels.
  if (config_.post_blocks == 0 && config_.code_dim != w[depth]) {
    throw std::invalid_argument("model config: post_blocks = 0 requires code_dim == last width");
  }
  head_ = make_conv("head", w[0], config_.classes, 1, 1, 0, rng, 1.0);
}

std::vector<Parameter*> SegModel::parameters() {
  std::vector<Parameter*> out;
  auto conv = [&](ConvLayer& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  auto block = [&](ConvBlock& b) {
    conv(b.conv);
    out.push_back(&b.norm.gamma);
    out.push_back(&b.norm.beta);
  };
  block(stem_);
  for (auto& b : down_) block(b);
  for (auto& b : pre_) block(b);
  conv(project_);
  out.push_back(&codebook_.embeddings);
  out.push_back(&nystrom_.anchors);
  out.push_back(&nystrom_.log_bandwidth);
  for (auto& r : references_.references) out.push_back(&r);
  out.push_back(&respatial_rows_);
  out.push_back(&respatial_cols_);
  for (auto& b : post_) block(b);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    out.push_back(&up_[i].weight);
    out.push_back(&up_[i].bias);
    block(fuse_[i]);
  }
  conv(head_);
  return out;
}

std::vector<const Parameter*> SegModel::parameters() const {
  auto ps = const_cast<SegModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Var SegModel::conv_block(Graph& g, Var x, ConvBlock& b) {
  Var y = nn::conv2d(x, g.parameter(b.conv.weight), g.parameter(b.conv.bias), b.conv.stride,
                     b.conv.padding);
  y = nn::group_norm(y, g.parameter(b.norm.gamma), g.parameter(b.norm.beta), config_.groups);
  return ops::relu(y);
}

Var SegModel::encode_var(Graph& g, const Tensor& image, std::vector<Var>* skips) {
  if (image.shape() != Shape{config_.channels, config_.height, config_.width}) {
    throw ShapeError("forward: image " + shape_string(image.shape()) + " does not match model input " +
                     shape_string({config_.channels, config_.height, config_.width}));
  }
  Var x = conv_block(g, g.constant(image), stem_);
  if (skips) skips->push_back(x);
  for (std::size_t s = 0; s < down_.size(); ++s) {
    x = conv_block(g, x, down_[s]);
    if (skips && s + 1 < down_.size()) skips->push_back(x);
  }
  for (auto& b : pre_) x = conv_block(g, x, b);
  return nn::conv2d(x, g.parameter(project_.weight), g.parameter(project_.bias), 1, 0);
}

Tensor SegModel::encode(const Tensor& image) {
  Graph g;
  const Var z = encode_var(g, image, nullptr);
  const std::size_t n = config_.tokens();
  return ops::transpose_values(z.value().reshaped({config_.code_dim, n}));
}

FrozenQuantization SegModel::freeze_quantization(const Tensor& image) {
  const Tensor z = encode(image);
  FrozenQuantization f;
  f.indices = nearest_codes(z, codebook_.embeddings.value);
  f.offset = Tensor(z.shape());
  const std::size_t dim = config_.code_dim;
  for (std::size_t i = 0; i < f.indices.size(); ++i)
    for (std::size_t d = 0; d < dim; ++d) f.offset(i, d) = codebook_.embeddings.value(f.indices[i], d) - z(i, d);
  return f;
}

ForwardResult SegModel::forward(Graph& g, const Tensor& image, const FrozenQuantization* frozen) {
  const std::size_t n = config_.tokens(), dim = config_.code_dim;
  std::string stage = "encoder";
  try {
    ForwardResult r;
    std::vector<Var> skips;
    const Var z_map = encode_var(g, image, &skips);
    const Var z_con = ops::transpose(ops::reshape(z_map, {dim, n}));

    stage = "quantizer";
    QuantizedVars q;
    if (frozen) {
      if (frozen->indices.size() != n || frozen->offset.shape() != Shape{n, dim}) {
        throw ShapeError("forward: frozen quantisation does not match " + std::to_string(n) + " tokens");
      }
      q.indices = frozen->indices;
      q.z_dis = ops::add(z_con, g.constant(frozen->offset));
      q.quant_loss = quant_loss(z_con, ops::gather_rows(g.parameter(codebook_.embeddings), q.indices),
                                config_.beta, config_.quant_mode);
    } else {
      q = quantize(z_con, g.parameter(codebook_.embeddings), config_.beta, config_.quant_mode);
    }
    r.quant_loss = q.quant_loss;
    r.code_indices = q.indices;
    r.diagnostics.code_usage = codebook_usage(q.indices, config_.codes);

    stage = "mapper";
    MapperOutput m = embed_multi_ref(q.z_dis, references_, nystrom_);
    const Tensor a = uniform_marginal(n), b = uniform_marginal(config_.bins);
    for (const Var& plan : m.plans) r.diagnostics.transport_residuals.push_back(marginal_residual(plan.value(), a, b));
    r.plans = m.plans;

    stage = "respatialize";
    const Var tokens = ops::matmul(ops::matmul(g.parameter(respatial_rows_), m.embedding),
                                   g.parameter(respatial_cols_));
    const Var merged = config_.merge == BottleneckMerge::kResidual ? ops::add(q.z_dis, tokens) : tokens;
    Var y = ops::reshape(ops::transpose(merged), {dim, config_.grid_height(), config_.grid_width()});

    stage = "post-bottleneck";
    for (auto& blk : post_) y = conv_block(g, y, blk);

    stage = "decoder";
    for (std::size_t i = 0; i < up_.size(); ++i) {
      y = nn::upconv2x2(y, g.parameter(up_[i].weight), g.parameter(up_[i].bias));
      if (config_.skip_connections) y = nn::concat_channels(y, skips[skips.size() - 1 - i]);
      y = conv_block(g, y, fuse_[i]);
    }
    stage = "head";
    r.logits = nn::conv2d(y, g.parameter(head_.weight), g.parameter(head_.bias), 1, 0);
    return r;
  } catch (const NumericalError& e) {
    throw NumericalError("forward (" + stage + "): " + e.what());
  }
}

void SegModel::warm_start(std::span<const Tensor> images, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("warm_start: need at least one image");
  const std::size_t n = config_.tokens(), dim = config_.code_dim;
  Tensor feats({images.size() * n, dim});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor z = encode(images[i]);
    std::copy(z.data().begin(), z.data().end(), feats.data().begin() + static_cast<std::ptrdiff_t>(i * n * dim));
  }
  codebook_.warm_start(feats, rng);
  // Anchors come from the quantised features so they live where z_dis does.
  const QuantizeResult q = quantize(feats, codebook_);
  NystromEmbedding fresh = NystromEmbedding::from_batch(q.z_dis, config_.anchors, rng);
  nystrom_.anchors.value = fresh.anchors.value;
  nystrom_.log_bandwidth.value = fresh.log_bandwidth.value;
  nystrom_.anchors.zero_grad();
  nystrom_.log_bandwidth.zero_grad();
}

Var seg_loss(Var logits, std::span<const std::uint8_t> labels, Var quant_loss, SegLossMode mode) {
  const Tensor& z = logits.value();
  if (z.rank() != 3 || labels.size() != z.dim(1) * z.dim(2)) {
    throw ShapeError("seg_loss: logits " + shape_string(z.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= z.dim(0)) {
      throw std::invalid_argument("seg_loss: label " + std::to_string(labels[i]) + " at pixel " +
                                  std::to_string(i) + " out of range for " +
                                  std::to_string(z.dim(0)) + " classes");
    }
  }
  const bool softmax = mode == SegLossMode::kSoftmaxCE;
  const Var ce = softmax ? nn::softmax_cross_entropy(logits, labels) : nn::sigmoid_bce(logits, labels);
  const Var probs = softmax ? nn::softmax_channels(logits) : nn::sigmoid(logits);
  const Var dice = nn::soft_dice_loss(probs, labels, 1, 1e-5);
  return ops::add(ops::add(ce, dice), quant_loss);
}

std::vector<std::uint8_t> predict_labels(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("predict: logits must be [K, H, W]");
  const std::size_t k = logits.dim(0), p = logits.dim(1) * logits.dim(2);
  std::vector<std::uint8_t> out(p, 0);
  for (std::size_t px = 0; px < p; ++px) {
    double best = logits[px];
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c * p + px] > best) {
        best = logits[c * p + px];
        out[px] = static_cast<std::uint8_t>(c);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> predict(SegModel& model, const Tensor& image) {
  Graph g;
  return predict_labels(model.forward(g, image).logits.value());
}

}  // namespace l2g
