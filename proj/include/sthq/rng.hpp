#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sthq {

std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent seed for a named consumer from the run seed, so
/// reseeding one module never shifts the random stream of another.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}
  Rng(std::uint64_t seed, std::string_view tag) : engine_(derive_seed(seed, tag)) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_));
  }
  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sthq
