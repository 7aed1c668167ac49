#include "onerec/numerics/rng.hpp"

#include <cmath>
#include <string>

#include "onerec/error.hpp"

namespace onerec {

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

uint64_t Rng::nextU64() { return gen_(); }

double Rng::uniform() {
  return static_cast<double>(nextU64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (hasSpare_) {
    hasSpare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  hasSpare_ = true;
  return u * factor;
}

int Rng::uniformInt(int n) {
  return static_cast<int>(uniformInt64(n));
}

int64_t Rng::uniformInt64(int64_t n) {
  if (n <= 0) throw ArgumentError("uniformInt bound must be positive, got " + std::to_string(n));
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t r;
  do {
    r = nextU64();
  } while (r >= limit);
  return static_cast<int64_t>(r % un);
}

Rng Rng::substream(std::string_view name) const {
  return Rng(splitmix64(seed_ ^ fnv1a64(name)));
}

std::vector<int> Rng::sampleWithoutReplacement(int n, int k) {
  if (k > n) throw ArgumentError("cannot sample " + std::to_string(k) + " distinct values from " + std::to_string(n));
  // Partial Fisher-Yates over an index array.
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    int j = i + uniformInt(n - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    out.push_back(idx[static_cast<size_t>(i)]);
  }
  return out;
}

}  // namespace onerec
