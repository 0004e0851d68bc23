#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace shisr {

/// SplitMix64 finalizer; combines seeds into statistically independent ones.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Seeded generator used for every random decision in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0);
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace shisr
