#include "l2g/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace l2g::ops {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

ConstMapMatrix as_matrix(const Tensor& t) {
  return ConstMapMatrix(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

MapMatrix as_matrix(Tensor& t) {
  return MapMatrix(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

void require_scalar(Var s, const char* what) {
  if (s.value().size() != 1) {
    throw ShapeError(std::string(what) + ": expected a single-element tensor, got " +
                     shape_string(s.shape()));
  }
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  if (out.size() == 0) return out;
  if (a.cols() == 0) return out;
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

Tensor transpose_values(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Tensor pairwise_sqdist_values(const Tensor& a, const Tensor& b) {
  require_matrix(a, "pairwise_sqdist");
  require_matrix(b, "pairwise_sqdist");
  if (a.cols() != b.cols()) {
    throw ShapeError("pairwise_sqdist: feature dimension differs " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data().data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.data().data() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = ai[c] - bj[c];
        s += diff * diff;
      }
      out(i, j) = std::max(s, 0.0);
    }
  }
  return out;
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.graph().record("add", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.graph().record("sub", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    if (!g.requires_grad(b)) return;
    Tensor& gb = g.grad_buffer(b);
    for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.graph().record("mul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad_buffer(a);
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad_buffer(b);
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = map_values(a.value(), [c](double v) { return v * c; });
  return a.graph().record("scale", std::move(out), {a}, [a, c](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = map_values(a.value(), [c](double v) { return v + c; });
  return a.graph().record("add_scalar", std::move(out), {a},
                          [a](Graph& g, const Tensor& go) { g.accumulate(a, go); });
}

Var mul_scalar(Var a, Var s) {
  require_scalar(s, "mul_scalar");
  const double c = s.value()[0];
  Tensor out = map_values(a.value(), [c](double v) { return v * c; });
  return a.graph().record("mul_scalar", std::move(out), {a, s}, [a, s](Graph& g, const Tensor& go) {
    const double c = s.value()[0];
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
    }
    if (g.requires_grad(s)) {
      double acc = 0.0;
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * av[i];
      g.grad_buffer(s)[0] += acc;
    }
  });
}

Var exp(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::exp(v); });
  Tensor saved = out;
  return a.graph().record("exp", std::move(out), {a},
                          [a, saved = std::move(saved)](Graph& g, const Tensor& go) {
                            Tensor& ga = g.grad_buffer(a);
                            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * saved[i];
                          });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericalError("log: non-positive input");
  }
  Tensor out = map_values(a.value(), [](double v) { return std::log(v); });
  return a.graph().record("log", std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / av[i];
  });
}

Var square(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return v * v; });
  return a.graph().record("square", std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += 2.0 * av[i] * go[i];
  });
}

Var relu(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return a.graph().record("relu", std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < go.size(); ++i)
      if (av[i] > 0.0) ga[i] += go[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record("sum", Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    for (double& v : ga.data()) v += go[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var dot(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  return a.graph().record("dot", Tensor::scalar(s), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[0] * b.value()[i];
    }
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[0] * a.value()[i];
    }
  });
}

Var matmul(Var a, Var b) {
  Tensor out = matmul_values(a.value(), b.value());
  return a.graph().record("matmul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (go.size() == 0) return;
    if (g.requires_grad(a) && a.value().size() > 0) {
      as_matrix(g.grad_buffer(a)).noalias() += as_matrix(go) * as_matrix(b.value()).transpose();
    }
    if (g.requires_grad(b) && b.value().size() > 0) {
      as_matrix(g.grad_buffer(b)).noalias() += as_matrix(a.value()).transpose() * as_matrix(go);
    }
  });
}

Var transpose(Var a) {
  return a.graph().record("transpose", transpose_values(a.value()), {a},
                          [a](Graph& g, const Tensor& go) { g.accumulate(a, transpose_values(go)); });
}

Var reshape(Var a, Shape shape) {
  return a.graph().record("reshape", a.value().reshaped(std::move(shape)), {a},
                          [a](Graph& g, const Tensor& go) {
                            Tensor& ga = g.grad_buffer(a);
                            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                          });
}

Var add_row_vector(Var a, Var v) {
  require_matrix(a.value(), "add_row_vector");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (v.value().size() != m) throw ShapeError("add_row_vector: vector length mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += v.value()[j];
  return a.graph().record("add_row_vector", std::move(out), {a, v},
                          [a, v, n, m](Graph& g, const Tensor& go) {
                            g.accumulate(a, go);
                            if (!g.requires_grad(v)) return;
                            Tensor& gv = g.grad_buffer(v);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j) gv[j] += go(i, j);
                          });
}

Var add_col_vector(Var a, Var v) {
  require_matrix(a.value(), "add_col_vector");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (v.value().size() != n) throw ShapeError("add_col_vector: vector length mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += v.value()[i];
  return a.graph().record("add_col_vector", std::move(out), {a, v},
                          [a, v, n, m](Graph& g, const Tensor& go) {
                            g.accumulate(a, go);
                            if (!g.requires_grad(v)) return;
                            Tensor& gv = g.grad_buffer(v);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j) gv[i] += go(i, j);
                          });
}

namespace {

// Shared implementation: reduce along rows (axis 1) or columns (axis 0).
Var logsumexp_axis(Var a, int axis) {
  require_matrix(a.value(), "logsumexp");
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  const std::size_t outer = axis == 1 ? n : m;
  const std::size_t inner = axis == 1 ? m : n;
  if (inner == 0) throw ShapeError("logsumexp: empty reduction");
  auto at = [&](std::size_t o, std::size_t k) { return axis == 1 ? x(o, k) : x(k, o); };
  Tensor out({outer});
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < inner; ++k) mx = std::max(mx, at(o, k));
    double s = 0.0;
    for (std::size_t k = 0; k < inner; ++k) s += std::exp(at(o, k) - mx);
    out[o] = mx + std::log(s);
  }
  Tensor lse = out;
  return a.graph().record(axis == 1 ? "logsumexp_rows" : "logsumexp_cols", std::move(out), {a},
                          [a, axis, n, m, lse = std::move(lse)](Graph& g, const Tensor& go) {
                            const Tensor& x = a.value();
                            Tensor& ga = g.grad_buffer(a);
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < m; ++j) {
                                const std::size_t o = axis == 1 ? i : j;
                                ga(i, j) += go[o] * std::exp(x(i, j) - lse[o]);
                              }
                            }
                          });
}

}  // namespace

Var logsumexp_rows(Var a) { return logsumexp_axis(a, 1); }
Var logsumexp_cols(Var a) { return logsumexp_axis(a, 0); }

Var pairwise_sqdist(Var a, Var b) {
  Tensor out = pairwise_sqdist_values(a.value(), b.value());
  return a.graph().record("pairwise_sqdist", std::move(out), {a, b}, [a, b](Graph& g,
                                                                           const Tensor& go) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
    const bool need_a = g.requires_grad(a), need_b = g.requires_grad(b);
    Tensor* ga = need_a ? &g.grad_buffer(a) : nullptr;
    Tensor* gb = need_b ? &g.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double w = 2.0 * go(i, j);
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = av(i, c) - bv(j, c);
          if (ga) (*ga)(i, c) += w * diff;
          if (gb) (*gb)(j, c) -= w * diff;
        }
      }
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  require_matrix(table.value(), "gather_rows");
  const Tensor& tv = table.value();
  const std::size_t k = tv.rows(), d = tv.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= k) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return table.graph().record("gather_rows", std::move(out), {table},
                              [table, idx = std::move(idx), d](Graph& g, const Tensor& go) {
                                Tensor& gt = g.grad_buffer(table);
                                for (std::size_t r = 0; r < idx.size(); ++r)
                                  for (std::size_t c = 0; c < d; ++c) gt(idx[r], c) += go(r, c);
                              });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts.front().value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != d) throw ShapeError("concat_rows: column count differs");
    total += p.value().rows();
  }
  Tensor out({total, d});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  return parts.front().graph().record("concat_rows", std::move(out), parts,
                                      [parts](Graph& g, const Tensor& go) {
                                        std::size_t offset = 0;
                                        for (const Var& p : parts) {
                                          const std::size_t len = p.value().size();
                                          if (g.requires_grad(p)) {
                                            Tensor& gp = g.grad_buffer(p);
                                            for (std::size_t i = 0; i < len; ++i)
                                              gp[i] += go[offset + i];
                                          }
                                          offset += len;
                                        }
                                      });
}

Var stop_gradient(Var a) { return a.graph().constant(a.value()); }

Var sym_inv_sqrt(Var a, double floor) {
  require_matrix(a.value(), "sym_inv_sqrt");
  const std::size_t k = a.value().rows();
  if (a.value().cols() != k) throw ShapeError("sym_inv_sqrt: matrix must be square");
  RowMatrix sym = as_matrix(a.value());
  sym = 0.5 * (sym + sym.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("sym_inv_sqrt: eigendecomposition failed");
  }
  const Eigen::MatrixXd u = solver.eigenvectors();
  const Eigen::VectorXd lambda = solver.eigenvalues();
  Eigen::VectorXd f(k), df(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double l = lambda(static_cast<Eigen::Index>(i));
    const double lc = std::max(l, floor);
    f(static_cast<Eigen::Index>(i)) = 1.0 / std::sqrt(lc);
    df(static_cast<Eigen::Index>(i)) = l > floor ? -0.5 / (lc * std::sqrt(lc)) : 0.0;
  }
  Tensor out({k, k});
  as_matrix(out) = u * f.asDiagonal() * u.transpose();

  return a.graph().record(
      "sym_inv_sqrt", std::move(out), {a}, [a, u, lambda, f, df, k](Graph& g, const Tensor& go) {
        const auto kk = static_cast<Eigen::Index>(k);
        Eigen::MatrixXd gsym = as_matrix(go);
        gsym = 0.5 * (gsym + gsym.transpose()).eval();
        Eigen::MatrixXd inner = u.transpose() * gsym * u;
        for (Eigen::Index i = 0; i < kk; ++i) {
          for (Eigen::Index j = 0; j < kk; ++j) {
            const double dl = lambda(i) - lambda(j);
            const double scale_ij =
                std::abs(dl) > 1e-12 * std::max(1.0, std::abs(lambda(i)))
                    ? (f(i) - f(j)) / dl
                    : 0.5 * (df(i) + df(j));
            inner(i, j) *= scale_ij;
          }
        }
        const Eigen::MatrixXd ga = u * inner * u.transpose();
        Tensor& buf = g.grad_buffer(a);
        as_matrix(buf) += ga;
      });
}

}  // namespace l2g::ops
