#pragma once

#include <cstdint>
#include <vector>

namespace rdd {

/// Deterministic splitmix64 generator. Kept self-contained so streams are
/// reproducible byte-for-byte regardless of standard library internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (cos branch only).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n), n > 0.
  std::int64_t uniform_int(std::int64_t n);

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);

  /// Stream derivation: deterministic child seed from a base seed and a tag.
  static std::uint64_t mix(std::uint64_t base, std::uint64_t tag);

 private:
  std::uint64_t state_;
};

}  // namespace rdd
