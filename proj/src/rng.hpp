#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace gdpo {

// splitmix64; used to derive independent substream seeds from one root seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, uint64_t tag) {
  return mix64(root ^ mix64(tag));
}

inline uint64_t derive_seed(uint64_t root, uint64_t tag_a, uint64_t tag_b) {
  return mix64(derive_seed(root, tag_a) ^ mix64(tag_b + 0x632be59bd9b4e019ULL));
}

// Seeded stream with hand-rolled draws so results do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // uniform in [-s, s]
  double uniform_symmetric(double s) { return (2.0 * uniform() - 1.0) * s; }

  // uniform integer in [lo, hi] inclusive
  int uniform_int(int lo, int hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    // modulo bias is < 2^-40 for desk-scale ranges; acceptable here
    return lo + static_cast<int>(eng_() % range);
  }

  // index sampled from an (approximately normalized) probability vector;
  // the final bucket absorbs rounding remainder.
  int categorical(std::span<const double> probs) {
    double u = uniform();
    double acc = 0.0;
    for (size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace gdpo
