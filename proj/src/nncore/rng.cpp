#include "nncore/rng.hpp"

#include <cmath>

#include "common/errors.hpp"

namespace nncore {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  if (has_spare_gaussian_) {
    has_spare_gaussian_ = false;
    return spare_gaussian_;
  }
  const double u = 1.0 - next_double();  // (0, 1], keeps log finite
  const double angle = kTwoPi * next_double();
  const double radius = std::sqrt(-2.0 * std::log(u));
  spare_gaussian_ = radius * std::sin(angle);
  has_spare_gaussian_ = true;
  return radius * std::cos(angle);
}

int Rng::next_int(int bound) {
  if (bound < 1) throw err::ValidationError("Rng::next_int: bound must be >= 1");
  const std::uint64_t b = static_cast<std::uint64_t>(bound);
  // Rejection sampling for an unbiased draw.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % b;
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return static_cast<int>(r % b);
}

Rng Rng::derive(std::uint64_t index) const {
  std::uint64_t sm = seed_ ^ 0x6a09e667f3bcc909ULL;
  const std::uint64_t a = splitmix64(sm);
  sm ^= index;
  const std::uint64_t b = splitmix64(sm);
  return Rng(a ^ b ^ (index * 0x9e3779b97f4a7c15ULL));
}

Rng Rng::derive(std::string_view label) const { return derive(hash_label(label)); }

}  // namespace nncore
