#pragma once

#include <cstdint>
#include <random>

namespace hvr {

/// Deterministic per-realization seed: a SplitMix64 mix of (master_seed, index).
/// Streams for distinct indices are derived independently, so a realization
/// can be regenerated from its index alone regardless of execution order.
std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t index);

/// Random stream with platform-independent output. The std distributions are
/// implementation-defined, so uniform and bounded draws are done here by hand.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : seed_(seed), engine_(seed) {}
  static Stream split(std::uint64_t master_seed, std::uint64_t index) {
    return Stream(derive_seed(master_seed, index));
  }

  std::uint64_t seed() const { return seed_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, bound), bound > 0, without modulo bias.
  std::uint64_t below(std::uint64_t bound);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace hvr
