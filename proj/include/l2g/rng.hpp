#pragma once

#include <array>
#include <cstdint>

#include "l2g/tensor.hpp"

namespace l2g {

/// xoshiro256** seeded through splitmix64. The stream is fully specified by the
/// seed, so results are identical across platforms and standard libraries
/// (no std::*_distribution is used anywhere).
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; caches the second variate.
  double normal();

  Tensor uniform_tensor(Shape shape, double lo, double hi);
  Tensor normal_tensor(Shape shape, double stddev = 1.0);

  State state() const { return s_; }
  void set_state(const State& s);

 private:
  State s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace l2g
