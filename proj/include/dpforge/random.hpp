// Copyright 2026 The dpforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Counter-based pseudo-random streams.
//
// Every random quantity in the toolkit is a pure function of a 64-bit key and
// a position in the stream, so results never depend on thread scheduling or on
// the standard library's distribution implementations. Keys for sub-streams
// are derived by hashing a parent key with integer tags (see DeriveKey).

#ifndef DPFORGE_RANDOM_HPP_
#define DPFORGE_RANDOM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace dpforge {

// SplitMix64 finalizer; a bijective avalanche mix of 64 bits.
constexpr uint64_t Mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Hashes a parent key together with a list of tags into an independent key.
constexpr uint64_t DeriveKey(uint64_t key, std::initializer_list<uint64_t> tags) {
  uint64_t h = Mix64(key ^ 0x5DEECE66DULL);
  for (uint64_t t : tags) h = Mix64(h ^ Mix64(t + 0x632BE59BD9B4E019ULL));
  return h;
}

// Stream of values x_i = Mix64(key + i * gamma). Copyable; copies replay.
class Rng {
 public:
  explicit Rng(uint64_t key) : key_(key) {}

  uint64_t NextU64() { return Mix64(key_ + (++counter_) * kGamma); }

  // Uniform in [0, 1) with 53 random bits.
  double Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1); safe as a logarithm argument.
  double UniformOpen() {
    return (static_cast<double>(NextU64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (one variate per pair of uniforms).
  double Normal() {
    const double u1 = UniformOpen();
    const double u2 = Uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n) by rejection; n must be positive.
  uint64_t UniformInt(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = NextU64();
    } while (x >= limit);
    return x % n;
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  template <typename T>
  void Shuffle(std::span<T> values) {
    for (size_t i = values.size(); i > 1; --i) {
      const size_t j = UniformInt(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  std::vector<double> NormalVector(size_t n) {
    std::vector<double> out(n);
    for (double& v : out) v = Normal();
    return out;
  }

 private:
  static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  uint64_t key_;
  uint64_t counter_ = 0;
};

// k distinct indices from [0, n), returned in increasing order.
inline std::vector<size_t> SampleWithoutReplacement(Rng& rng, size_t n,
                                                    size_t k) {
  std::vector<size_t> all(n);
  for (size_t i = 0; i < n; ++i) all[i] = i;
  // Partial Fisher-Yates: the first k slots become the sample.
  for (size_t i = 0; i < k && i < n; ++i) {
    const size_t j = i + rng.UniformInt(n - i);
    std::swap(all[i], all[j]);
  }
  all.resize(std::min(k, n));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace dpforge

#endif  // DPFORGE_RANDOM_HPP_
