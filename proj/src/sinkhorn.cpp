#include "l2g/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "l2g/ops.hpp"

namespace l2g {
namespace {

Tensor log_values(const Tensor& v) {
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] > 0.0 ? std::log(v[i]) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

void check_marginal(const Tensor& m, std::size_t len, const char* name) {
  if (m.rank() != 1 || m.size() != len) {
    throw ShapeError(std::string("sinkhorn: marginal ") + name + " has shape " +
                     shape_string(m.shape()) + ", expected [" + std::to_string(len) + "]");
  }
  double total = 0.0;
  for (double v : m.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      // Zero-mass entries make the log-domain potentials infinite.
      throw std::invalid_argument(std::string("sinkhorn: marginal ") + name +
                                  " must have strictly positive finite entries");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument(std::string("sinkhorn: marginal ") + name + " sums to " +
                                std::to_string(total) + ", expected 1");
  }
}

Tensor scaled_kernel_log(const Tensor& cost, double epsilon) {
  Tensor out(cost.shape());
  for (std::size_t i = 0; i < cost.size(); ++i) out[i] = -cost[i] / epsilon;
  if (!out.all_finite()) {
    throw NumericalError("sinkhorn: epsilon " + std::to_string(epsilon) +
                         " is too small for the cost scale (log kernel overflows)");
  }
  return out;
}

}  // namespace

Tensor uniform_marginal(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_marginal: n must be positive");
  return Tensor({n}, 1.0 / static_cast<double>(n));
}

void validate(const OtProblem& p) {
  require_matrix(p.cost, "sinkhorn cost");
  if (p.cost.rows() == 0 || p.cost.cols() == 0) throw ShapeError("sinkhorn: empty cost");
  if (!p.cost.all_finite()) throw NumericalError("sinkhorn: non-finite cost entries");
  check_marginal(p.a, p.cost.rows(), "a");
  check_marginal(p.b, p.cost.cols(), "b");
  if (!(p.epsilon > 0.0) || !std::isfinite(p.epsilon)) {
    throw std::invalid_argument("sinkhorn: epsilon must be positive");
  }
  if (p.iterations < 1) throw std::invalid_argument("sinkhorn: iterations must be >= 1");
}

double marginal_residual(const Tensor& plan, const Tensor& a, const Tensor& b) {
  const std::size_t n = plan.rows(), t = plan.cols();
  double r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t; ++j) s += plan(i, j);
    r = std::max(r, std::abs(s - a[i]));
  }
  for (std::size_t j = 0; j < t; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += plan(i, j);
    r = std::max(r, std::abs(s - b[j]));
  }
  return r;
}

Var sinkhorn(Var cost, const Tensor& a, const Tensor& b, double epsilon, int iterations) {
  require_matrix(cost.value(), "sinkhorn cost");
  const std::size_t n = cost.value().rows(), t = cost.value().cols();
  check_marginal(a, n, "a");
  check_marginal(b, t, "b");
  if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be positive");
  if (iterations < 1) throw std::invalid_argument("sinkhorn: iterations must be >= 1");
  // Surface overflow before it turns into an anonymous non-finite node.
  (void)scaled_kernel_log(cost.value(), epsilon);

  Graph& g = cost.graph();
  const Var log_kernel = ops::scale(cost, -1.0 / epsilon);
  const Var log_a = g.constant(log_values(a));
  const Var log_b = g.constant(log_values(b));
  Var alpha = g.constant(Tensor({n}));
  Var beta = g.constant(Tensor({t}));
  for (int it = 0; it < iterations; ++it) {
    alpha = ops::sub(log_a, ops::logsumexp_rows(ops::add_row_vector(log_kernel, beta)));
    beta = ops::sub(log_b, ops::logsumexp_cols(ops::add_col_vector(log_kernel, alpha)));
  }
  return ops::exp(ops::add_col_vector(ops::add_row_vector(log_kernel, beta), alpha));
}

TransportPlan sinkhorn_solve(const OtProblem& problem) {
  validate(problem);
  Graph g;
  const Var plan = sinkhorn(g.constant(problem.cost), problem.a, problem.b, problem.epsilon,
                            problem.iterations);
  TransportPlan out;
  out.plan = plan.value();
  out.marginal_residual = marginal_residual(out.plan, problem.a, problem.b);
  return out;
}

TransportPlan sinkhorn_converge(const OtProblem& problem, double tolerance, int max_iterations) {
  validate(problem);
  const std::size_t n = problem.cost.rows(), t = problem.cost.cols();
  const Tensor log_kernel = scaled_kernel_log(problem.cost, problem.epsilon);
  const Tensor log_a = log_values(problem.a);
  const Tensor log_b = log_values(problem.b);
  std::vector<double> alpha(n, 0.0), beta(t, 0.0), buf(std::max(n, t));

  auto lse = [&](std::size_t count, auto&& term) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) buf[k] = term(k), mx = std::max(mx, buf[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < count; ++k) s += std::exp(buf[k] - mx);
    return mx + std::log(s);
  };
  auto materialize = [&] {
    Tensor plan({n, t});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < t; ++j) plan(i, j) = std::exp(log_kernel(i, j) + alpha[i] + beta[j]);
    return plan;
  };

  TransportPlan out;
  for (int it = 0; it < max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i)
      alpha[i] = log_a[i] - lse(t, [&](std::size_t j) { return log_kernel(i, j) + beta[j]; });
    for (std::size_t j = 0; j < t; ++j)
      beta[j] = log_b[j] - lse(n, [&](std::size_t i) { return log_kernel(i, j) + alpha[i]; });
    out.plan = materialize();
    if (!out.plan.all_finite()) throw NumericalError("sinkhorn: non-finite plan");
    out.marginal_residual = marginal_residual(out.plan, problem.a, problem.b);
    if (out.marginal_residual < tolerance) break;
  }
  return out;
}

double entropy(const Tensor& plan) {
  double h = 0.0;
  for (double v : plan.data()) {
    if (v < 0.0 || !std::isfinite(v)) throw NumericalError("entropy: invalid plan entry");
    if (v > 0.0) h -= v * (std::log(v) - 1.0);
  }
  return h;
}

double entropy(const TransportPlan& plan) { return entropy(plan.plan); }

double transport_cost(const TransportPlan& plan, const Tensor& cost) {
  require_same_shape(plan.plan, cost, "transport_cost");
  double s = 0.0;
  for (std::size_t i = 0; i < cost.size(); ++i) s += plan.plan[i] * cost[i];
  return s;
}

}  // namespace l2g
