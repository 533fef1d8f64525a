#include "l2g/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "l2g/kmeans.hpp"
#include "l2g/ops.hpp"

namespace l2g {

double NystromEmbedding::bandwidth() const { return std::exp(log_bandwidth.value[0]); }

double median_pairwise_distance(const Tensor& rows) {
  require_matrix(rows, "median_pairwise_distance");
  std::vector<double> d;
  const Tensor sq = ops::pairwise_sqdist_values(rows, rows);
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t j = i + 1; j < rows.rows(); ++j) d.push_back(std::sqrt(sq(i, j)));
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

NystromEmbedding NystromEmbedding::from_anchors(Tensor anchors, double bandwidth) {
  require_matrix(anchors, "nystrom anchors");
  if (anchors.rows() == 0) throw std::invalid_argument("nystrom: need at least one anchor");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("nystrom: bandwidth must be positive");
  NystromEmbedding emb;
  emb.anchors = Parameter("nystrom.anchors", std::move(anchors));
  emb.log_bandwidth = Parameter("nystrom.log_bandwidth", Tensor::scalar(std::log(bandwidth)));
  return emb;
}

NystromEmbedding NystromEmbedding::from_batch(const Tensor& batch, std::size_t anchor_count,
                                              Rng& rng) {
  require_matrix(batch, "nystrom batch");
  if (batch.rows() == 0) throw std::invalid_argument("nystrom: empty warm-up batch");
  const std::size_t d = batch.cols();

  // Distinct rows in first-seen order.
  std::vector<std::size_t> distinct;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    bool seen = false;
    for (std::size_t j : distinct) {
      if (std::equal(batch.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                     batch.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d),
                     batch.data().begin() + static_cast<std::ptrdiff_t>(j * d))) {
        seen = true;
        break;
      }
    }
    if (!seen) distinct.push_back(i);
  }
  Tensor unique({distinct.size(), d});
  for (std::size_t r = 0; r < distinct.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) unique(r, c) = batch(distinct[r], c);
  const double sigma = median_pairwise_distance(unique);

  // Partial Fisher-Yates over the distinct rows; any shortfall is filled with
  // jittered copies so the Gram matrix stays well conditioned.
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(distinct.size() - i));
    std::swap(distinct[i], distinct[j]);
  }
  Tensor anchors({anchor_count, d});
  for (std::size_t a = 0; a < anchor_count; ++a) {
    const std::size_t src = distinct[a % distinct.size()];
    const bool jitter = a >= distinct.size();
    for (std::size_t c = 0; c < d; ++c)
      anchors(a, c) = batch(src, c) + (jitter ? 0.1 * sigma * rng.normal() : 0.0);
  }
  return from_anchors(std::move(anchors), sigma);
}

Tensor NystromEmbedding::gram_inv_sqrt() const {
  Graph g;
  const Var w = g.constant(anchors.value);
  const Var lb = g.constant(log_bandwidth.value);
  return ops::sym_inv_sqrt(gaussian_kernel(w, w, lb), eigenvalue_floor).value();
}

Var gaussian_kernel(Var x, Var y, Var log_bandwidth) {
  // exp(-d / (2 sigma^2)) with sigma = exp(log_bandwidth)
  const Var coeff = ops::scale(ops::exp(ops::scale(log_bandwidth, -2.0)), -0.5);
  return ops::exp(ops::mul_scalar(ops::pairwise_sqdist(x, y), coeff));
}

Var nystrom_embed(Var z, NystromEmbedding& emb) {
  Graph& g = z.graph();
  if (z.value().rank() != 2 || z.value().cols() != emb.input_dim()) {
    throw ShapeError("nystrom_embed: input " + shape_string(z.shape()) + " vs anchor dim " +
                     std::to_string(emb.input_dim()));
  }
  const Var w = g.parameter(emb.anchors);
  const Var lb = g.parameter(emb.log_bandwidth);
  const Var inv_sqrt = ops::sym_inv_sqrt(gaussian_kernel(w, w, lb), emb.eigenvalue_floor);
  return ops::matmul(gaussian_kernel(z, w, lb), inv_sqrt);
}

Tensor nystrom_embed(const Tensor& z, const NystromEmbedding& emb) {
  Graph g;
  const Var w = g.constant(emb.anchors.value);
  const Var lb = g.constant(emb.log_bandwidth.value);
  if (z.rank() != 2 || z.cols() != emb.input_dim()) {
    throw ShapeError("nystrom_embed: input " + shape_string(z.shape()) + " vs anchor dim " +
                     std::to_string(emb.input_dim()));
  }
  const Var inv_sqrt = ops::sym_inv_sqrt(gaussian_kernel(w, w, lb), emb.eigenvalue_floor);
  return ops::matmul(gaussian_kernel(g.constant(z), w, lb), inv_sqrt).value();
}

Tensor position_weights(std::size_t n, std::size_t t, double sigma_pos) {
  if (n == 0 || t == 0) throw std::invalid_argument("position_weights: n and t must be >= 1");
  if (!(sigma_pos > 0.0)) throw std::invalid_argument("position_weights: sigma_pos must be > 0");
  Tensor s({n, t}, 1.0);
  if (std::isinf(sigma_pos)) return s;
  const double inv_var = 1.0 / (sigma_pos * sigma_pos);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      const double diff = static_cast<double>(i + 1) / static_cast<double>(n) -
                          static_cast<double>(j + 1) / static_cast<double>(t);
      s(i, j) = std::exp(-inv_var * diff * diff);
    }
  }
  return s;
}

std::size_t ReferenceSet::bins() const {
  return references.empty() ? 0 : references.front().value.rows();
}

std::size_t ReferenceSet::dim() const {
  return references.empty() ? 0 : references.front().value.cols();
}

void ReferenceSet::validate() const {
  if (references.empty()) throw std::invalid_argument("references: need q >= 1");
  for (const Parameter& r : references) {
    require_matrix(r.value, "reference");
    if (r.value.rows() != bins() || r.value.cols() != dim()) {
      throw ShapeError("references: inconsistent shapes " + shape_string(r.value.shape()) +
                       " vs " + shape_string(references.front().value.shape()));
    }
    if (r.value.rows() == 0 || r.value.cols() == 0) throw ShapeError("references: empty reference");
    if (!r.value.all_finite()) throw NumericalError("references: non-finite entries");
  }
}

ReferenceSet init_references(ReferenceInit strategy, Rng& rng, const ReferenceOptions& o,
                             const std::optional<Tensor>& warmup) {
  if (o.count < 1 || o.bins < 1 || o.dim < 1) {
    throw std::invalid_argument("init_references: q, t and k_a must be >= 1");
  }
  ReferenceSet set;
  set.sigma_pos = o.sigma_pos;
  set.epsilon = o.epsilon;
  set.iterations = o.iterations;
  for (std::size_t r = 0; r < o.count; ++r) {
    Tensor value;
    if (strategy == ReferenceInit::kRandomUnit) {
      value = rng.normal_tensor({o.bins, o.dim});
      for (std::size_t i = 0; i < o.bins; ++i) {
        double norm = 0.0;
        for (std::size_t c = 0; c < o.dim; ++c) norm += value(i, c) * value(i, c);
        norm = std::sqrt(norm);
        if (norm == 0.0) throw NumericalError("init_references: degenerate Gaussian row");
        for (std::size_t c = 0; c < o.dim; ++c) value(i, c) /= norm;
      }
    } else {
      if (!warmup || warmup->rank() != 2 || warmup->rows() == 0) {
        throw std::invalid_argument("init_references: kmeans-warmstart needs a non-empty batch");
      }
      if (warmup->cols() != o.dim) throw ShapeError("init_references: warm-up dim mismatch");
      Rng seed_rng(rng.next_u64());
      value = kmeans(*warmup, o.bins, seed_rng);
    }
    set.references.emplace_back("mapper.reference." + std::to_string(r), std::move(value));
  }
  return set;
}

Var alignment_cost(Var psi, Var ref) { return ops::scale(ops::matmul(psi, ops::transpose(ref)), -1.0); }

Tensor alignment_cost(const Tensor& psi, const Tensor& ref) {
  Graph g;
  return alignment_cost(g.constant(psi), g.constant(ref)).value();
}

Var ot_align(Var psi, Var ref, double epsilon, int iterations) {
  if (psi.value().rank() != 2 || ref.value().rank() != 2 ||
      psi.value().cols() != ref.value().cols()) {
    throw ShapeError("ot_align: feature dims differ " + shape_string(psi.shape()) + " vs " +
                     shape_string(ref.shape()));
  }
  const Var cost = alignment_cost(psi, ref);
  return sinkhorn(cost, uniform_marginal(psi.value().rows()), uniform_marginal(ref.value().rows()),
                  epsilon, iterations);
}

TransportPlan ot_align(const Tensor& psi, const Tensor& ref, double epsilon, int iterations) {
  OtProblem p;
  p.cost = alignment_cost(psi, ref);
  p.a = uniform_marginal(psi.rows());
  p.b = uniform_marginal(ref.rows());
  p.epsilon = epsilon;
  p.iterations = iterations;
  return sinkhorn_solve(p);
}

Var pool_bins(Var psi, Var plan, const Tensor& position) {
  Graph& g = psi.graph();
  const double t = static_cast<double>(plan.value().cols());
  const Var weighted = ops::mul(plan, g.constant(position));
  return ops::scale(ops::matmul(ops::transpose(weighted), psi), std::sqrt(t));
}

Var embed_single_ref(Var z_dis, Parameter& ref, NystromEmbedding& emb, double sigma_pos,
                     double epsilon, int iterations) {
  const Var psi = nystrom_embed(z_dis, emb);
  const Var r = z_dis.graph().parameter(ref);
  const Var plan = ot_align(psi, r, epsilon, iterations);
  return pool_bins(psi, plan, position_weights(psi.value().rows(), ref.value.rows(), sigma_pos));
}

MapperOutput embed_multi_ref_psi(Var psi, ReferenceSet& refs) {
  refs.validate();
  if (psi.value().cols() != refs.dim()) {
    throw ShapeError("embed_multi_ref: embedded dim " + std::to_string(psi.value().cols()) +
                     " vs reference dim " + std::to_string(refs.dim()));
  }
  Graph& g = psi.graph();
  const Tensor position = position_weights(psi.value().rows(), refs.bins(), refs.sigma_pos);
  MapperOutput out;
  std::vector<Var> blocks;
  for (Parameter& ref : refs.references) {
    const Var plan = ot_align(psi, g.parameter(ref), refs.epsilon, refs.iterations);
    out.plans.push_back(plan);
    blocks.push_back(pool_bins(psi, plan, position));
  }
  const Var stacked = blocks.size() == 1 ? blocks.front() : ops::concat_rows(blocks);
  out.embedding = ops::scale(stacked, 1.0 / std::sqrt(static_cast<double>(refs.count())));
  return out;
}

MapperOutput embed_multi_ref(Var z_dis, ReferenceSet& refs, NystromEmbedding& emb) {
  return embed_multi_ref_psi(nystrom_embed(z_dis, emb), refs);
}

}  // namespace l2g
