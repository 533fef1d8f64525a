#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "l2g/autodiff.hpp"

namespace l2g {

struct GradCheckEntry {
  std::string name;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double worst() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Probe at most this many entries per parameter (0 probes all of them).
  /// Entries are chosen by a fixed stride so the check stays deterministic.
  std::size_t max_probes = 0;
};

/// Builds a scalar loss on the supplied graph. Must bind parameters through
/// Graph::parameter so the analytic pass can read their gradients.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares analytic gradients against central differences
/// (f(p+h) - f(p-h)) / 2h for every probed entry.
///
/// Per entry the relative error is |a - n| / max(|a|, |n|, floor) where floor is
/// 1e-3 times the largest gradient magnitude of that parameter, at least 1e-8,
/// and at least the rounding noise of the loss over the step
/// (1e4 ulp * max(1, |loss|) / step). Entries far below either scale are judged
/// on that scale instead of on their own round-off.
GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

}  // namespace l2g
