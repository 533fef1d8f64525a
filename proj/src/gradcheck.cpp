#include "l2g/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace l2g {

bool GradCheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

namespace {

double evaluate(const LossBuilder& loss) {
  Graph g;
  const double v = loss(g).value().item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss at probe point");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  if (!(options.step >= 1e-7 && options.step <= 1e-3)) {
    throw std::invalid_argument("grad_check: step must lie in [1e-7, 1e-3]");
  }

  std::vector<Tensor> analytic;
  double loss_value = 0.0;
  {
    Graph g;
    Var out = loss(g);
    loss_value = out.value().item();
    g.backward(out, /*flush=*/false);
    for (Parameter* p : params) analytic.push_back(g.grad(g.parameter(*p)));
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const Tensor& a = analytic[pi];
    const std::size_t n = p.value.size();
    const std::size_t probes =
        options.max_probes == 0 ? n : std::min(options.max_probes, n);
    const std::size_t stride = probes == 0 ? 1 : std::max<std::size_t>(1, n / probes);

    std::vector<std::pair<double, double>> pairs;
    double scale = 0.0;
    for (std::size_t k = 0, idx = 0; k < probes && idx < n; ++k, idx += stride) {
      const double saved = p.value[idx];
      p.value[idx] = saved + options.step;
      const double up = evaluate(loss);
      p.value[idx] = saved - options.step;
      const double down = evaluate(loss);
      p.value[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      pairs.emplace_back(a[idx], numeric);
      scale = std::max({scale, std::abs(a[idx]), std::abs(numeric)});
    }

    GradCheckEntry entry;
    entry.name = p.name;
    entry.probes = pairs.size();
    // Central differences cannot resolve slopes below the loss rounding noise
    // over the step; 1e4 ulp allows for accumulation through deep graphs.
    const double noise = 1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss_value)) / options.step;
    const double floor = std::max({1e-3 * scale, 1e-8, noise});
    double total = 0.0;
    for (const auto& [an, nu] : pairs) {
      const double rel = std::abs(an - nu) / std::max({std::abs(an), std::abs(nu), floor});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      total += rel;
    }
    entry.mean_rel_error = pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
    entry.passed = entry.max_rel_error < options.tolerance;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace l2g
