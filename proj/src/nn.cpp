#include "l2g/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "l2g/ops.hpp"

namespace l2g::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

ConstMapMatrix view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMatrix(t.data().data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

MapMatrix view(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMatrix(t.data().data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

void require_image(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected [C, H, W], got " + shape_string(t.shape()));
  }
}

void require_labels(const Tensor& logits, std::span<const std::uint8_t> labels, const char* what) {
  require_image(logits, what);
  const std::size_t pixels = logits.dim(1) * logits.dim(2);
  if (labels.size() != pixels) {
    throw ShapeError(std::string(what) + ": label count " + std::to_string(labels.size()) +
                     " vs " + std::to_string(pixels) + " pixels");
  }
  const std::size_t classes = logits.dim(0);
  for (std::uint8_t l : labels) {
    if (l >= classes) {
      throw std::out_of_range(std::string(what) + ": label " + std::to_string(l) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

struct ConvGeometry {
  std::size_t c, h, w, k, stride, pad, oh, ow;
};

Tensor im2col(const Tensor& x, const ConvGeometry& g) {
  Tensor col({g.c * g.k * g.k, g.oh * g.ow});
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* dst = col.data().data() + ((c * g.k + ky) * g.k + kx) * g.oh * g.ow;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            dst[oy * g.ow + ox] =
                inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
  return col;
}

void col2im_add(const Tensor& col, const ConvGeometry& g, Tensor& dx) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = col.data().data() + ((c * g.k + ky) * g.k + kx) * g.oh * g.ow;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                src[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_image(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_string(wv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  }
  const std::size_t out_ch = wv.dim(0);
  if (bias.value().size() != out_ch) throw ShapeError("conv2d: bias length mismatch");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(2), stride, padding, 0, 0};
  if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) throw ShapeError("conv2d: input too small");
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;
  const std::size_t patch = g.c * g.k * g.k, positions = g.oh * g.ow;

  Tensor col = im2col(xv, g);
  Tensor out({out_ch, g.oh, g.ow});
  auto om = view(out, out_ch, positions);
  om.noalias() = view(wv, out_ch, patch) * view(col, patch, positions);
  for (std::size_t o = 0; o < out_ch; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias.value()[o];

  return x.graph().record(
      "conv2d", std::move(out), {x, weight, bias},
      [x, weight, bias, g, out_ch, patch, positions, col = std::move(col)](Graph& gr,
                                                                            const Tensor& go) {
        const auto gm = view(go, out_ch, positions);
        if (gr.requires_grad(weight)) {
          view(gr.grad_buffer(weight), out_ch, patch).noalias() +=
              gm * view(col, patch, positions).transpose();
        }
        if (gr.requires_grad(bias)) {
          Tensor& gb = gr.grad_buffer(bias);
          for (std::size_t o = 0; o < out_ch; ++o) gb[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
        }
        if (gr.requires_grad(x)) {
          Tensor dcol({patch, positions});
          view(dcol, patch, positions).noalias() =
              view(weight.value(), out_ch, patch).transpose() * gm;
          col2im_add(dcol, g, gr.grad_buffer(x));
        }
      });
}

Var upconv2x2(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_image(xv, "upconv2x2");
  if (wv.rank() != 4 || wv.dim(1) != 2 || wv.dim(2) != 2 || wv.dim(3) != xv.dim(0)) {
    throw ShapeError("upconv2x2: weight " + shape_string(wv.shape()) +
                     " incompatible with input " + shape_string(xv.shape()));
  }
  const std::size_t in_ch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), out_ch = wv.dim(0);
  if (bias.value().size() != out_ch) throw ShapeError("upconv2x2: bias length mismatch");
  const std::size_t hw = h * w;

  Tensor taps({out_ch * 4, hw});
  view(taps, out_ch * 4, hw).noalias() = view(wv, out_ch * 4, in_ch) * view(xv, in_ch, hw);
  Tensor out({out_ch, 2 * h, 2 * w});
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          out[(o * 2 * h + 2 * y + k / 2) * 2 * w + 2 * xx + k % 2] =
              taps((o * 4 + k), y * w + xx) + bias.value()[o];

  return x.graph().record(
      "upconv2x2", std::move(out), {x, weight, bias},
      [x, weight, bias, in_ch, h, w, out_ch, hw](Graph& gr, const Tensor& go) {
        Tensor dtaps({out_ch * 4, hw});
        for (std::size_t o = 0; o < out_ch; ++o)
          for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t y = 0; y < h; ++y)
              for (std::size_t xx = 0; xx < w; ++xx)
                dtaps((o * 4 + k), y * w + xx) = go[(o * 2 * h + 2 * y + k / 2) * 2 * w + 2 * xx + k % 2];
        const auto dt = view(dtaps, out_ch * 4, hw);
        if (gr.requires_grad(weight)) {
          view(gr.grad_buffer(weight), out_ch * 4, in_ch).noalias() +=
              dt * view(x.value(), in_ch, hw).transpose();
        }
        if (gr.requires_grad(bias)) {
          Tensor& gb = gr.grad_buffer(bias);
          for (std::size_t o = 0; o < out_ch; ++o)
            gb[o] += dt.middleRows(static_cast<Eigen::Index>(o * 4), 4).sum();
        }
        if (gr.requires_grad(x)) {
          view(gr.grad_buffer(x), in_ch, hw).noalias() +=
              view(weight.value(), out_ch * 4, in_ch).transpose() * dt;
        }
      });
}

Var group_norm(Var x, Var gamma, Var beta, std::size_t groups, double eps) {
  const Tensor& xv = x.value();
  require_image(xv, "group_norm");
  const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  if (groups == 0 || c % groups != 0) {
    throw std::invalid_argument("group_norm: " + std::to_string(c) +
                                " channels not divisible into " + std::to_string(groups) + " groups");
  }
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw ShapeError("group_norm: affine parameter length mismatch");
  }
  const std::size_t m = (c / groups) * hw;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(groups);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const double* src = xv.data().data() + grp * m;
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(m);
    inv_std[grp] = 1.0 / std::sqrt(var + eps);
    double* dst = xhat.data().data() + grp * m;
    for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mu) * inv_std[grp];
  }
  Tensor out(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i)
      out[ch * hw + i] = gamma.value()[ch] * xhat[ch * hw + i] + beta.value()[ch];

  return x.graph().record(
      "group_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, c, hw, m, groups, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Graph& gr, const Tensor& go) {
        if (gr.requires_grad(gamma) || gr.requires_grad(beta)) {
          Tensor dg({c}), db({c});
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) {
              dg[ch] += go[ch * hw + i] * xhat[ch * hw + i];
              db[ch] += go[ch * hw + i];
            }
          }
          gr.accumulate(gamma, dg);
          gr.accumulate(beta, db);
        }
        if (!gr.requires_grad(x)) return;
        Tensor& dx = gr.grad_buffer(x);
        std::vector<double> dxhat(m);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t idx = grp * m + i;
            dxhat[i] = go[idx] * gamma.value()[idx / hw];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xhat[idx];
          }
          mean_d /= static_cast<double>(m);
          mean_dx /= static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t idx = grp * m + i;
            dx[idx] += inv_std[grp] * (dxhat[i] - mean_d - xhat[idx] * mean_dx);
          }
        }
      });
}

Var concat_channels(Var a, Var b) {
  require_image(a.value(), "concat_channels");
  require_image(b.value(), "concat_channels");
  const std::size_t h = a.value().dim(1), w = a.value().dim(2);
  if (b.value().dim(1) != h || b.value().dim(2) != w) {
    throw ShapeError("concat_channels: spatial size differs " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t ca = a.value().dim(0), cb = b.value().dim(0);
  const Var joined = ops::concat_rows({ops::reshape(a, {ca, h * w}), ops::reshape(b, {cb, h * w})});
  return ops::reshape(joined, {ca + cb, h, w});
}

Var softmax_channels(Var logits) {
  const Tensor& z = logits.value();
  require_image(z, "softmax_channels");
  const std::size_t k = z.dim(0), p = z.dim(1) * z.dim(2);
  Tensor prob(z.shape());
  for (std::size_t px = 0; px < p; ++px) {
    double mx = z[px];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z[c * p + px]);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += prob[c * p + px] = std::exp(z[c * p + px] - mx);
    for (std::size_t c = 0; c < k; ++c) prob[c * p + px] /= s;
  }
  Tensor saved = prob;
  return logits.graph().record(
      "softmax_channels", std::move(prob), {logits},
      [logits, k, p, saved = std::move(saved)](Graph& gr, const Tensor& go) {
        Tensor& gz = gr.grad_buffer(logits);
        for (std::size_t px = 0; px < p; ++px) {
          double inner = 0.0;
          for (std::size_t c = 0; c < k; ++c) inner += go[c * p + px] * saved[c * p + px];
          for (std::size_t c = 0; c < k; ++c)
            gz[c * p + px] += saved[c * p + px] * (go[c * p + px] - inner);
        }
      });
}

Var sigmoid(Var x) {
  Tensor out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Tensor saved = out;
  return x.graph().record("sigmoid", std::move(out), {x},
                          [x, saved = std::move(saved)](Graph& gr, const Tensor& go) {
                            Tensor& gx = gr.grad_buffer(x);
                            for (std::size_t i = 0; i < go.size(); ++i)
                              gx[i] += go[i] * saved[i] * (1.0 - saved[i]);
                          });
}

Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels) {
  const Tensor& z = logits.value();
  require_labels(z, labels, "softmax_cross_entropy");
  const std::size_t k = z.dim(0), p = z.dim(1) * z.dim(2);
  Tensor prob({k, p});
  double loss = 0.0;
  for (std::size_t px = 0; px < p; ++px) {
    double mx = z[px];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z[c * p + px]);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c * p + px] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < k; ++c) prob[c * p + px] = std::exp(z[c * p + px] - lse);
    loss += lse - z[labels[px] * p + px];
  }
  loss /= static_cast<double>(p);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return logits.graph().record(
      "softmax_cross_entropy", Tensor::scalar(loss), {logits},
      [logits, k, p, prob = std::move(prob), lab = std::move(lab)](Graph& gr, const Tensor& go) {
        Tensor& gz = gr.grad_buffer(logits);
        const double s = go[0] / static_cast<double>(p);
        for (std::size_t c = 0; c < k; ++c)
          for (std::size_t px = 0; px < p; ++px)
            gz[c * p + px] += s * (prob[c * p + px] - (lab[px] == c ? 1.0 : 0.0));
      });
}

Var sigmoid_bce(Var logits, std::span<const std::uint8_t> labels) {
  const Tensor& z = logits.value();
  require_labels(z, labels, "sigmoid_bce");
  const std::size_t k = z.dim(0), p = z.dim(1) * z.dim(2);
  double loss = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t px = 0; px < p; ++px) {
      const double v = z[c * p + px];
      const double y = labels[px] == c ? 1.0 : 0.0;
      // log(1 + e^v) - y v, evaluated without overflow
      loss += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - y * v;
    }
  }
  const double denom = static_cast<double>(k * p);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return logits.graph().record(
      "sigmoid_bce", Tensor::scalar(loss / denom), {logits},
      [logits, k, p, denom, lab = std::move(lab)](Graph& gr, const Tensor& go) {
        const Tensor& z = logits.value();
        Tensor& gz = gr.grad_buffer(logits);
        for (std::size_t c = 0; c < k; ++c) {
          for (std::size_t px = 0; px < p; ++px) {
            const double v = z[c * p + px];
            const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            gz[c * p + px] += go[0] * (s - (lab[px] == c ? 1.0 : 0.0)) / denom;
          }
        }
      });
}

Var soft_dice_loss(Var probs, std::span<const std::uint8_t> labels, std::size_t first_class,
                   double smooth) {
  const Tensor& pv = probs.value();
  require_labels(pv, labels, "soft_dice_loss");
  const std::size_t k = pv.dim(0), p = pv.dim(1) * pv.dim(2);
  if (first_class >= k) throw std::invalid_argument("soft_dice_loss: no classes to score");
  const std::size_t scored = k - first_class;
  std::vector<double> inter(k, 0.0), uni(k, 0.0);
  for (std::size_t c = first_class; c < k; ++c) {
    for (std::size_t px = 0; px < p; ++px) {
      const double g = labels[px] == c ? 1.0 : 0.0;
      inter[c] += pv[c * p + px] * g;
      uni[c] += pv[c * p + px] + g;
    }
  }
  double mean_dice = 0.0;
  for (std::size_t c = first_class; c < k; ++c) mean_dice += (2.0 * inter[c] + smooth) / (uni[c] + smooth);
  mean_dice /= static_cast<double>(scored);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return probs.graph().record(
      "soft_dice_loss", Tensor::scalar(1.0 - mean_dice), {probs},
      [probs, k, p, first_class, scored, smooth, inter = std::move(inter), uni = std::move(uni),
       lab = std::move(lab)](Graph& gr, const Tensor& go) {
        Tensor& gp = gr.grad_buffer(probs);
        const double s = -go[0] / static_cast<double>(scored);
        for (std::size_t c = first_class; c < k; ++c) {
          const double den = uni[c] + smooth;
          const double num = 2.0 * inter[c] + smooth;
          for (std::size_t px = 0; px < p; ++px) {
            const double g = lab[px] == c ? 1.0 : 0.0;
            gp[c * p + px] += s * (2.0 * g / den - num / (den * den));
          }
        }
      });
}

}  // namespace l2g::nn
