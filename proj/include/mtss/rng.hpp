#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>

namespace mtss {

// Counter-based deterministic random stream.  A stream is a pure function of
// (key, counter), so disjoint streams can be derived for (seed, task, step)
// and consumed independently without shared mutable state.  Output is
// identical on every platform; std:: distributions are avoided on purpose.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key) : key_(key) {}

  // Derives a child stream key by folding ids into the seed.
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t k = mix(seed ^ 0x5851f42d4c957f2dULL);
    for (std::uint64_t id : ids) k = mix(k + 0x9e3779b97f4a7c15ULL * (id + 1));
    return RngStream(k);
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t uniform_below(std::uint64_t n) {
    return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Inclusive range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + std::int64_t(uniform_below(std::uint64_t(hi - lo + 1)));
  }

  // Box-Muller; consumes exactly two draws per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Stable 64-bit hash for parameter names and stream ids.
inline std::uint64_t hash_name(const char* s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (; *s; ++s) {
    h ^= std::uint64_t(static_cast<unsigned char>(*s));
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace mtss
