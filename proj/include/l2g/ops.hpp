#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "l2g/autodiff.hpp"
#include "l2g/tensor.hpp"

/// Differentiable primitives. Every function records one node with an analytic
/// backward rule on the graph of its first argument.
namespace l2g::ops {

// Elementwise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// a * s where s holds a single element.
Var mul_scalar(Var a, Var s);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var relu(Var a);

// Reductions to a single-element tensor.
Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);

// Matrix operations.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
/// a[i][j] + v[j]
Var add_row_vector(Var a, Var v);
/// a[i][j] + v[i]
Var add_col_vector(Var a, Var v);
/// log Σ_j exp(a[i][j]) for each row i.
Var logsumexp_rows(Var a);
/// log Σ_i exp(a[i][j]) for each column j.
Var logsumexp_cols(Var a);
/// out[i][j] = Σ_c (a[i][c] - b[j][c])^2, clamped at zero.
Var pairwise_sqdist(Var a, Var b);
/// Rows of `table` selected by `indices`; gradient scatters back.
Var gather_rows(Var table, std::span<const std::size_t> indices);
/// Stacks matrices with equal column count.
Var concat_rows(const std::vector<Var>& parts);
/// Same value, no gradient flows through.
Var stop_gradient(Var a);
/// Inverse square root of a symmetric matrix via eigendecomposition, with
/// eigenvalues clamped from below at `floor`. Backward uses the divided
/// differences of the spectral function.
Var sym_inv_sqrt(Var a, double floor);

// Non-recording helpers shared by modules and tests.
Tensor matmul_values(const Tensor& a, const Tensor& b);
Tensor transpose_values(const Tensor& a);
Tensor pairwise_sqdist_values(const Tensor& a, const Tensor& b);

}  // namespace l2g::ops
