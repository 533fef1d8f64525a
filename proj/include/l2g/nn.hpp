#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "l2g/autodiff.hpp"

/// Image-shaped differentiable layers. Activations are [C, H, W] per sample.
namespace l2g::nn {

/// 2-D convolution. weight [O, C, k, k], bias [O]; zero padding.
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding);

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
/// weight [O, 2, 2, C], bias [O].
Var upconv2x2(Var x, Var weight, Var bias);

/// Normalises each group of C/groups channels by its own mean and variance,
/// then applies a per-channel affine map. gamma, beta: [C].
Var group_norm(Var x, Var gamma, Var beta, std::size_t groups, double eps = 1e-5);

/// Stacks [C1, H, W] and [C2, H, W] into [C1 + C2, H, W].
Var concat_channels(Var a, Var b);

/// Softmax over the channel axis of [K, H, W].
Var softmax_channels(Var logits);
Var sigmoid(Var x);

/// Mean over pixels of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels);
/// Mean over classes and pixels of one-vs-rest binary cross-entropy on sigmoid outputs.
Var sigmoid_bce(Var logits, std::span<const std::uint8_t> labels);

/// 1 - mean over classes c >= first_class of
/// (2 Σ p_c g_c + smooth) / (Σ p_c + Σ g_c + smooth), p given as [K, H, W].
Var soft_dice_loss(Var probs, std::span<const std::uint8_t> labels, std::size_t first_class = 1,
                   double smooth = 1e-5);

}  // namespace l2g::nn
