#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the library code path it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "l2g/tensor.hpp"

namespace l2g::oracle {

inline Tensor matmul_loops(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Tensor sqdist_loops(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) s += std::pow(a(i, c) - b(j, c), 2);
      out(i, j) = s;
    }
  return out;
}

/// Exact OT value for uniform square marginals: the optimum is attained at a
/// Birkhoff vertex, i.e. a permutation matrix scaled by 1/n.
inline double permutation_lp_optimum(const Tensor& cost) {
  const std::size_t n = cost.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += cost(i, perm[i]);
    best = std::min(best, s / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Best permutation (argmin of the assignment cost).
inline std::vector<std::size_t> permutation_lp_argmin(const Tensor& cost) {
  const std::size_t n = cost.rows();
  std::vector<std::size_t> perm(n), best_perm;
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += cost(i, perm[i]);
    if (s < best) best = s, best_perm = perm;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best_perm;
}

/// Uniform 2x2 marginals leave one free parameter x = T00 in [0, 1/2]:
/// T = [[x, 1/2 - x], [1/2 - x, x]]. Grid search minimises cost + eps * sum T(log T - 1).
inline Tensor two_by_two_coupling(double x) {
  return Tensor::matrix({{x, 0.5 - x}, {0.5 - x, x}});
}

inline double direct_entropy(const Tensor& t) {
  double h = 0.0;
  for (double v : t.data())
    if (v > 0.0) h += -v * (std::log(v) - 1.0);
  return h;
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(Tensor a, std::vector<double> b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  return x;
}

inline double gaussian(const Tensor& x, std::size_t i, const Tensor& y, std::size_t j,
                       double sigma) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) s += std::pow(x(i, c) - y(j, c), 2);
  return std::exp(-s / (2.0 * sigma * sigma));
}

/// k(x, w) k(w, w)^{-1} k(w, y) via a linear solve.
inline double nystrom_inner(const Tensor& x, std::size_t i, const Tensor& y, std::size_t j,
                            const Tensor& w, double sigma) {
  const std::size_t k = w.rows();
  Tensor gram({k, k});
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) gram(a, b) = gaussian(w, a, w, b, sigma);
  std::vector<double> ky(k), kx(k);
  for (std::size_t a = 0; a < k; ++a) {
    ky[a] = gaussian(w, a, y, j, sigma);
    kx[a] = gaussian(x, i, w, a, sigma);
  }
  const std::vector<double> sol = solve(gram, ky);
  double s = 0.0;
  for (std::size_t a = 0; a < k; ++a) s += kx[a] * sol[a];
  return s;
}

/// Positional-weighted pooling by explicit loops: bin j = sqrt(t) Σ_i T_ij S_ij psi_i.
inline Tensor pooling_loops(const Tensor& plan, const Tensor& psi, double sigma_pos) {
  const std::size_t n = plan.rows(), t = plan.cols(), d = psi.cols();
  Tensor out({t, d});
  for (std::size_t j = 0; j < t; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = double(i + 1) / double(n) - double(j + 1) / double(t);
        const double sij = std::exp(-diff * diff / (sigma_pos * sigma_pos));
        s += plan(i, j) * sij * psi(i, c);
      }
      out(j, c) = std::sqrt(double(t)) * s;
    }
  return out;
}

/// Classic (percentile 100) or percentile Hausdorff by all pairs over
/// boundary pixels, with boundary = class pixel having a 4-neighbour outside
/// the class (image border counts as outside).
inline std::vector<std::pair<int, int>> boundary(const std::vector<std::uint8_t>& m, int h, int w,
                                                 int cls) {
  std::vector<std::pair<int, int>> out;
  auto in = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && m[y * w + x] == cls; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (in(y, x) && (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1)))
        out.emplace_back(y, x);
  return out;
}

inline double percentile_linear(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * double(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

inline double hausdorff_all_pairs(const std::vector<std::uint8_t>& a,
                                  const std::vector<std::uint8_t>& b, int h, int w, int cls,
                                  double q) {
  const auto ba = boundary(a, h, w, cls), bb = boundary(b, h, w, cls);
  auto directed = [](const auto& from, const auto& to) {
    std::vector<double> d;
    for (auto [y0, x0] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [y1, x1] : to) best = std::min(best, std::hypot(double(y0 - y1), double(x0 - x1)));
      d.push_back(best);
    }
    return d;
  };
  return std::max(percentile_linear(directed(ba, bb), q), percentile_linear(directed(bb, ba), q));
}

// Softmax CE + (1 - mean foreground soft Dice, smooth 1e-5) + quant, one pixel at a time.
inline double seg_loss_loops(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                             double quant) {
  const std::size_t k = logits.dim(0), p = logits.dim(1) * logits.dim(2);
  double ce = 0.0;
  std::vector<double> inter(k, 0.0), psum(k, 0.0), gsum(k, 0.0);
  for (std::size_t px = 0; px < p; ++px) {
    double mx = -1e300;
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits[c * p + px]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[c * p + px] - mx);
    for (std::size_t c = 0; c < k; ++c) {
      const double prob = std::exp(logits[c * p + px] - mx) / z;
      const double g = labels[px] == c ? 1.0 : 0.0;
      if (g > 0) ce -= std::log(prob);
      inter[c] += prob * g;
      psum[c] += prob;
      gsum[c] += g;
    }
  }
  double dice = 0.0;
  for (std::size_t c = 1; c < k; ++c) dice += (2 * inter[c] + 1e-5) / (psum[c] + gsum[c] + 1e-5);
  return ce / double(p) + 1.0 - dice / double(k - 1) + quant;
}

}  // namespace l2g::oracle
