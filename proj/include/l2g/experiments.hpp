#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "l2g/gradcheck.hpp"
#include "l2g/model.hpp"

namespace l2g {

/// Finite-difference checks over the quantiser loss path, the mapper, and the
/// whole model. `fault` adds a loss term hidden from the analytic pass, which
/// every group must then flag.
struct GradCheckGroup {
  std::string group;
  GradCheckReport report;
};

enum class GradCheckScale { kTiny, kSmall };

/// tiny: 8x8 image, K=8, t=2, q=2, k_a=4. small: 16x16, K=16, t=4, q=2, k_a=8.
ModelConfig gradcheck_model_config(GradCheckScale scale);
std::vector<GradCheckGroup> run_gradcheck_suite(GradCheckScale scale, std::uint64_t seed, bool fault = false,
                                                double tolerance_mapper = 1e-4, double tolerance_model = 1e-3);

/// Timing and convergence of one alignment-and-pooling pass over n codes.
struct BenchRow {
  std::size_t n = 0;
  std::size_t t = 0;
  double epsilon = 0.0;
  int iterations = 0;
  double seconds = 0.0;   // best of the repetitions
  double residual = 0.0;  // marginal residual of the plan
};

struct BenchOptions {
  std::vector<std::size_t> sizes = {256, 512, 1024, 2048, 4096};
  std::vector<std::size_t> bins = {8};
  std::vector<double> epsilons = {0.1};
  std::vector<int> iterations = {10};
  std::size_t anchors = 32;
  double sigma_pos = 0.3;
  int repeats = 5;
  std::uint64_t seed = 0;
};

std::vector<BenchRow> bench_mapper(const BenchOptions& options);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace l2g
