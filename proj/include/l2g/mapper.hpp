#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "l2g/autodiff.hpp"
#include "l2g/rng.hpp"
#include "l2g/sinkhorn.hpp"
#include "l2g/tensor.hpp"

namespace l2g {

/// Nyström feature map for the Gaussian kernel
///   k(x, y) = exp(-||x - y||^2 / (2 sigma^2)),
///   psi(z)  = k(z, w) k(w, w)^(-1/2).
/// Both the anchors w and log(sigma) are trainable.
struct NystromEmbedding {
  Parameter anchors;        // k_a x dim
  Parameter log_bandwidth;  // [1]
  double eigenvalue_floor = 1e-6;

  std::size_t size() const { return anchors.value.rows(); }
  std::size_t input_dim() const { return anchors.value.cols(); }
  double bandwidth() const;

  /// Anchors picked from distinct rows of `batch`; bandwidth from the median
  /// pairwise distance of those rows.
  static NystromEmbedding from_batch(const Tensor& batch, std::size_t anchor_count, Rng& rng);
  static NystromEmbedding from_anchors(Tensor anchors, double bandwidth);

  /// k(w, w)^(-1/2) for the current anchors.
  Tensor gram_inv_sqrt() const;
};

/// Median of pairwise Euclidean distances between rows (1.0 if all coincide).
double median_pairwise_distance(const Tensor& rows);

Var gaussian_kernel(Var x, Var y, Var log_bandwidth);
Var nystrom_embed(Var z, NystromEmbedding& emb);
Tensor nystrom_embed(const Tensor& z, const NystromEmbedding& emb);

/// S_ij = exp(-(i/n - j/t)^2 / sigma^2) with 1-based i, j. sigma = +inf gives ones.
Tensor position_weights(std::size_t n, std::size_t t, double sigma_pos);

/// Learnable references z_ref (each t x k_a) plus the alignment settings.
struct ReferenceSet {
  std::vector<Parameter> references;
  double sigma_pos = 0.3;
  double epsilon = 0.1;
  int iterations = 10;

  std::size_t count() const { return references.size(); }
  std::size_t bins() const;
  std::size_t dim() const;
  void validate() const;
};

enum class ReferenceInit { kRandomUnit, kKMeansWarmStart };

struct ReferenceOptions {
  std::size_t bins = 8;
  std::size_t dim = 32;
  std::size_t count = 2;
  double sigma_pos = 0.3;
  double epsilon = 0.1;
  int iterations = 10;
};

/// random-unit: Gaussian rows normalised to unit length.
/// kmeans-warmstart: per reference, k-means centroids of `warmup` (embedded
/// codes, rows x k_a) seeded from an independent draw of `rng`.
ReferenceSet init_references(ReferenceInit strategy, Rng& rng, const ReferenceOptions& options,
                             const std::optional<Tensor>& warmup = std::nullopt);

/// Cost M_ij = -<psi_i, ref_j>.
Var alignment_cost(Var psi, Var ref);
Tensor alignment_cost(const Tensor& psi, const Tensor& ref);

/// Entropic OT between embedded codes and a reference with uniform marginals.
Var ot_align(Var psi, Var ref, double epsilon, int iterations);
TransportPlan ot_align(const Tensor& psi, const Tensor& ref, double epsilon, int iterations);

/// sqrt(t) (T ∘ S)^T psi for a given plan T (n x t) and positional weights S.
Var pool_bins(Var psi, Var plan, const Tensor& position);

struct MapperOutput {
  Var embedding;           // (q t) x k_a
  std::vector<Var> plans;  // one n x t plan per reference
};

/// Single reference: sqrt(t) Σ_i [T ∘ S]_ij psi(z_i) for each bin j.
Var embed_single_ref(Var z_dis, Parameter& ref, NystromEmbedding& emb, double sigma_pos,
                     double epsilon, int iterations);
/// Concatenation of the per-reference embeddings scaled by 1/sqrt(q).
MapperOutput embed_multi_ref(Var z_dis, ReferenceSet& refs, NystromEmbedding& emb);
/// Same as above starting from already embedded codes.
MapperOutput embed_multi_ref_psi(Var psi, ReferenceSet& refs);

}  // namespace l2g
