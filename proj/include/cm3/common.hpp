#pragma once

// Shared aliases and small numeric helpers used across the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cm3 {

using Vec = std::vector<double>;
using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent RNG stream from a master seed and a stream tag.
inline Rng substream(uint64_t master_seed, uint64_t stream_tag) {
  return Rng(splitmix64(splitmix64(master_seed) ^ splitmix64(stream_tag)));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Samples an index from an (unnormalized is fine) nonnegative weight vector.
inline int sample_categorical(Rng& rng, std::span<const double> weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = uniform(rng, 0.0, total);
  double acc = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

inline Vec softmax(std::span<const double> logits) {
  double m = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline void append(Vec& dst, std::span<const double> src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

inline Vec concat(std::initializer_list<std::span<const double>> parts) {
  Vec out;
  for (auto& p : parts) append(out, p);
  return out;
}

inline Vec one_hot(int index, int size) {
  Vec v(size, 0.0);
  v.at(index) = 1.0;
  return v;
}

}  // namespace cm3
