#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace periscope {

/// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
/// is fixed by the standard) and maps raw 64-bit draws to doubles by hand so
/// that results are bit-identical across standard libraries. Gaussian
/// variates come from an Irwin–Hall sum of 12 uniforms, i.e. pure integer
/// draws plus exactly-rounded arithmetic.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  /// Uniform integer in [lo, hi] via rejection-free modulo on a 64-bit draw.
  /// Bias is < 2^-50 for the ranges used here and, unlike
  /// std::uniform_int_distribution, the mapping is implementation-independent.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(engine_() % span);
  }

  /// Standard normal via Irwin–Hall: sum of 12 uniforms minus 6 has mean 0,
  /// variance 1, support [-6, 6].
  double gaussian() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform01();
    return s - 6.0;
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  /// Fisher–Yates shuffle with the portable integer mapping above.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a stream index
/// (splitmix64 finalizer). Used to decorrelate per-sample / per-frame noise
/// without consuming draws from the parent stream.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace periscope
