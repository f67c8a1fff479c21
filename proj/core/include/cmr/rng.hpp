#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace cmr {

// Counter-based deterministic RNG (splitmix64 over a key/counter pair).
// Every random draw in the project flows from one root seed through named
// substreams, so runs are reproducible bit-for-bit and stream state is
// trivially serializable (two integers). Not cryptographic.
class Rng {
 public:
  Rng() : key_(0x9e3779b97f4a7c15ull), counter_(0) {}
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), counter_(0) {}
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  // Derives an independent stream; the parent stream is not advanced.
  Rng substream(std::string_view name) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return Rng(mix(key_ ^ h), 0);
  }
  Rng substream(std::uint64_t index) const { return Rng(mix(key_ + 0x632be59bd9b4e019ull * (index + 1)), 0); }

  std::uint64_t nextU64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  std::uint32_t nextU32() { return static_cast<std::uint32_t>(nextU64() >> 32); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(nextU64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? nextU64() % n : 0; }

  // Standard normal via Box-Muller; hand-rolled so the stream does not depend
  // on the standard library's distribution implementation.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

// FNV-1a over a string, used for config hashes recorded in artifacts.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cmr
