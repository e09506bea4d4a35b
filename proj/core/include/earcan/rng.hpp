#pragma once

#include <cstdint>
#include <string_view>

namespace earcan {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen over std::mt19937 +
// std::uniform_real_distribution because the output stream is fully
// specified: two builds on different platforms produce identical bits
// for the same seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Derive an independent stream for a named purpose. FNV-1a over the tag
  // mixed with the index keeps sub-streams decoupled and reproducible.
  Rng fork(std::string_view tag, std::uint64_t index = 0) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : tag) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      h *= 1099511628211ULL;
    }
    h ^= index + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return Rng(state_ ^ h);
  }

 private:
  std::uint64_t state_;
};

}  // namespace earcan
