#pragma once

#include "l2g/autodiff.hpp"
#include "l2g/tensor.hpp"

namespace l2g {

/// Entropic optimal transport problem: minimise <T, M> - epsilon * H(T) over
/// couplings T with row marginal a and column marginal b.
struct OtProblem {
  Tensor cost;  // n x t
  Tensor a;     // n, probability vector
  Tensor b;     // t, probability vector
  double epsilon = 0.1;
  int iterations = 10;
};

struct TransportPlan {
  Tensor plan;  // n x t
  double marginal_residual = 0.0;
};

/// Uniform probability vector of length n.
Tensor uniform_marginal(std::size_t n);

/// Throws std::invalid_argument / ShapeError / NumericalError on a malformed problem.
void validate(const OtProblem& problem);

/// Max-norm deviation of row sums from a and column sums from b.
double marginal_residual(const Tensor& plan, const Tensor& a, const Tensor& b);

/// Log-domain Sinkhorn with a fixed number of iterations. Potentials start at
/// zero (unit scaling vectors); each iteration updates the row potential, then
/// the column potential, so column marginals are exact after the last step.
TransportPlan sinkhorn_solve(const OtProblem& problem);

/// Same iteration as sinkhorn_solve, repeated until the marginal residual drops
/// below `tolerance` or `max_iterations` is reached. Not differentiable; meant
/// for verification and benchmarking.
TransportPlan sinkhorn_converge(const OtProblem& problem, double tolerance, int max_iterations);

/// Differentiable Sinkhorn: the iterations are unrolled on the tape so
/// gradients reach `cost`. Returns the n x t plan.
Var sinkhorn(Var cost, const Tensor& a, const Tensor& b, double epsilon, int iterations);

/// -Σ T_ij (log T_ij - 1) with 0 log 0 = 0.
double entropy(const TransportPlan& plan);
double entropy(const Tensor& plan);

/// Frobenius inner product <T, M>.
double transport_cost(const TransportPlan& plan, const Tensor& cost);

}  // namespace l2g
