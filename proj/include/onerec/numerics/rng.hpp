#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace onerec {

uint64_t fnv1a64(std::string_view s);
uint64_t splitmix64(uint64_t x);

// Deterministic RNG. All draws go through integer state (mt19937_64) and
// hand-rolled float conversions, so identical seeds give identical streams
// regardless of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t seed() const { return seed_; }
  uint64_t nextU64();

  // Uniform double in [0, 1).
  double uniform();
  // Standard normal via polar Box-Muller (uses sqrt/log only).
  double normal();
  // Uniform integer in [0, n), unbiased via rejection.
  int uniformInt(int n);
  int64_t uniformInt64(int64_t n);

  // Derive an independent stream from this generator's construction seed.
  Rng substream(std::string_view name) const;

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniformInt64(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  // k distinct indices drawn uniformly from [0, n) in draw order.
  std::vector<int> sampleWithoutReplacement(int n, int k);

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool hasSpare_ = false;
  double spare_ = 0.0;
};

}  // namespace onerec
