#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace nncore {

/// Deterministic xoshiro256** generator. Every stochastic operation in the
/// repo takes one of these explicitly; nothing draws from hidden global
/// state. Substreams derive from the stream's construction seed (not its
/// consumption position), so `derive` is stable no matter how much the
/// parent has been used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double next_double();

  /// Standard normal via Box-Muller; caches the spare deviate.
  double next_gaussian();

  /// Uniform integer in [0, bound). bound must be >= 1.
  int next_int(int bound);

  Rng derive(std::uint64_t index) const;
  Rng derive(std::string_view label) const;

  std::uint64_t seed() const { return seed_; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t state_[4] = {0, 0, 0, 0};
  bool has_spare_gaussian_ = false;
  double spare_gaussian_ = 0.0;
};

/// splitmix64 step; also used to hash ids into derived seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// FNV-1a over the bytes of a label, for named substreams.
std::uint64_t hash_label(std::string_view label);

}  // namespace nncore
