#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace esprm {

/// Counter-based random stream. Every draw is a pure function of
/// (seed, label, counter), so identical (seed, label) pairs replay the same
/// sequence on any platform and streams can be derived hierarchically
/// without coordination between workers.
///
/// Construction (all arithmetic mod 2^64):
///   key     = mix(mix(seed) ^ fnv1a64(label))
///   draw(i) = mix(key + i * 0x9E3779B97F4A7C15)   for i = 1, 2, ...
/// where mix is the splitmix64 finalizer and fnv1a64 hashes the label bytes.
/// Uniform doubles take the top 53 bits; normals use Box-Muller on a pair of
/// uniforms. `derive(label)` folds another label hash into the key, giving an
/// independent child stream.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label)
      : key_(mix(mix(seed) ^ fnv1a64(label))) {}

  RngStream derive(std::string_view label) const {
    return RngStream(Key{mix(key_ ^ fnv1a64(label))});
  }

  std::uint64_t next_u64() {
    counter_ += 0x9E3779B97F4A7C15ULL;
    return mix(key_ + counter_);
  }

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so log(u1) is finite.
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  struct Key {
    std::uint64_t value;
  };
  explicit RngStream(Key k) : key_(k.value) {}

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace esprm
