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

// Privatized mean gradient of DP-SGD.
//
// The flat form is
//
//   g = (1/B) sum_i (1/C) clip_C(grad_i) + (sigma/B) xi,   xi ~ N(0, I),
//
// i.e. per-example gradients are clipped to norm C and then normalised by C,
// so every contribution has norm at most one and sigma is in units of that
// bound. The sharded form computes the same quantity the way a multi-device
// trainer does: N_dev devices each run N_acc accumulation steps over local
// batches of B_local examples, every device adds the same noise sample at
// every step, device results are averaged, and steps are combined with
// Welford's running mean.

#ifndef DPFORGE_PRIVATIZER_HPP_
#define DPFORGE_PRIVATIZER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <thread>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/numeric.hpp"
#include "dpforge/random.hpp"

namespace dpforge::privatizer {

struct ClipSpec {
  double clip_norm = 1.0;

  absl::Status Validate() const {
    if (!(clip_norm > 0) || !std::isfinite(clip_norm)) {
      return absl::InvalidArgumentError(
          absl::StrCat("clip_norm must be positive, got ", clip_norm));
    }
    return absl::OkStatus();
  }
};

struct ShardingPlan {
  int64_t n_devices = 1;
  int64_t n_accum = 1;
  int64_t local_batch = 1;

  int64_t TotalBatch() const { return n_devices * n_accum * local_batch; }

  absl::Status Validate() const {
    if (n_devices < 1 || n_accum < 1 || local_batch < 1) {
      return absl::InvalidArgumentError(absl::StrCat(
          "sharding plan entries must be positive, got (", n_devices, ", ",
          n_accum, ", ", local_batch, ")"));
    }
    return absl::OkStatus();
  }
};

struct NoiseSpec {
  double sigma = 0.0;
  uint64_t seed = 0;

  absl::Status Validate() const {
    if (!(sigma >= 0) || !std::isfinite(sigma)) {
      return absl::InvalidArgumentError(
          absl::StrCat("sigma must be non-negative, got ", sigma));
    }
    return absl::OkStatus();
  }
};

struct PerExampleGradients {
  Matrix rows;  // one flattened gradient per example
  std::vector<int64_t> example_ids;

  absl::Status Validate() const {
    if (!example_ids.empty() &&
        static_cast<int64_t>(example_ids.size()) != rows.rows) {
      return absl::InvalidArgumentError(
          absl::StrCat(example_ids.size(), " example ids for ", rows.rows,
                       " gradient rows"));
    }
    return absl::OkStatus();
  }
};

// min(1, C / ||v||) * v.
inline Vector Clip(std::span<const double> v, double clip_norm) {
  Vector out(v.begin(), v.end());
  const double norm = Norm2(v);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (double& x : out) x *= scale;
  }
  return out;
}

// The shared standard Gaussian sample xi of dimension p for `seed`.
inline Vector SharedNoise(uint64_t seed, size_t p) {
  Rng rng(DeriveKey(seed, {0x7015E}));
  return rng.NormalVector(p);
}

// Running mean after folding in the `count`-th value.
inline Vector WelfordUpdate(std::span<const double> running_mean,
                            std::span<const double> new_value, int64_t count) {
  Vector out(running_mean.begin(), running_mean.end());
  const double inv = 1.0 / static_cast<double>(count);
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] += (new_value[i] - out[i]) * inv;
  }
  return out;
}

// (1/divisor) sum_i (1/C) clip_C(row_i) + (sigma/divisor) xi. With Poisson
// sampling the divisor is the expected batch size, not the realised one.
inline absl::StatusOr<Vector> PrivatizeWithDivisor(
    const PerExampleGradients& grads, const ClipSpec& clip,
    const NoiseSpec& noise, double divisor, size_t dim) {
  if (auto st = clip.Validate(); !st.ok()) return st;
  if (auto st = noise.Validate(); !st.ok()) return st;
  if (auto st = grads.Validate(); !st.ok()) return st;
  if (!(divisor > 0)) {
    return absl::InvalidArgumentError("batch divisor must be positive");
  }
  if (grads.rows.rows > 0 && static_cast<size_t>(grads.rows.cols) != dim) {
    return absl::InvalidArgumentError(absl::StrCat(
        "gradient rows have dimension ", grads.rows.cols, ", expected ", dim));
  }
  if (auto st = CheckFinite(grads.rows.data, "per-example gradients");
      !st.ok()) {
    return st;
  }
  Vector sum(dim, 0.0);
  for (int64_t r = 0; r < grads.rows.rows; ++r) {
    const Vector c = Clip(grads.rows.Row(r), clip.clip_norm);
    for (size_t j = 0; j < dim; ++j) sum[j] += c[j] / clip.clip_norm;
  }
  const Vector xi = SharedNoise(noise.seed, dim);
  Vector out(dim);
  for (size_t j = 0; j < dim; ++j) {
    out[j] = sum[j] / divisor + noise.sigma / divisor * xi[j];
  }
  return out;
}

// The single-expression form with B = total_batch = number of rows.
inline absl::StatusOr<Vector> PrivatizeFlat(const PerExampleGradients& grads,
                                            const ClipSpec& clip,
                                            const NoiseSpec& noise,
                                            int64_t total_batch) {
  if (grads.rows.rows < 1) {
    return absl::InvalidArgumentError("no per-example gradients");
  }
  if (total_batch != grads.rows.rows) {
    return absl::InvalidArgumentError(
        absl::StrCat("total_batch ", total_batch, " != number of rows ",
                     grads.rows.rows));
  }
  return PrivatizeWithDivisor(grads, clip, noise,
                              static_cast<double>(total_batch),
                              static_cast<size_t>(grads.rows.cols));
}

// Maps an input and a key to a perturbed copy of the input.
using AugmentFn =
    std::function<Vector(std::span<const double> x, uint64_t key)>;

inline AugmentFn IdentityAugment() {
  return [](std::span<const double> x, uint64_t) {
    return Vector(x.begin(), x.end());
  };
}

// Adds N(0, scale^2) noise to every coordinate.
inline AugmentFn JitterAugment(double scale) {
  return [scale](std::span<const double> x, uint64_t key) {
    Rng rng(key);
    Vector out(x.begin(), x.end());
    for (double& v : out) v += scale * rng.Normal();
    return out;
  };
}

// Replaces each coordinate by `fill` with probability `rate`.
inline AugmentFn MaskingAugment(double rate, double fill = 0.0) {
  return [rate, fill](std::span<const double> x, uint64_t key) {
    Rng rng(key);
    Vector out(x.begin(), x.end());
    for (double& v : out) {
      if (rng.Bernoulli(rate)) v = fill;
    }
    return out;
  };
}

// Gradient of the loss of batch example `index` at the (augmented) input x.
using GradientFn =
    std::function<Vector(int64_t index, std::span<const double> x)>;

struct ShardedOptions {
  int64_t k_aug = 1;
  AugmentFn augment = IdentityAugment();
  uint64_t augment_seed = 0;
  int workers = 1;  // threads over devices; output does not depend on it
};

// Key of augmentation j of the example with global batch position `index`.
inline uint64_t AugmentKey(uint64_t seed, int64_t index, int64_t j) {
  return DeriveKey(seed, {0xA06,
                          static_cast<uint64_t>(index),
                          static_cast<uint64_t>(j)});
}

// Privatized gradient computed as on N_dev devices with N_acc accumulation
// steps. Example (d, s, i) is row d * N_acc * B_local + s * B_local + i of
// `inputs`. The result equals PrivatizeFlat on the augmentation-averaged
// per-example gradients up to summation order.
inline absl::StatusOr<Vector> PrivatizeSharded(const Matrix& inputs,
                                               const GradientFn& gradient,
                                               size_t dim,
                                               const ShardingPlan& plan,
                                               const ClipSpec& clip,
                                               const NoiseSpec& noise,
                                               const ShardedOptions& options = {}) {
  if (auto st = plan.Validate(); !st.ok()) return st;
  if (auto st = clip.Validate(); !st.ok()) return st;
  if (auto st = noise.Validate(); !st.ok()) return st;
  if (options.k_aug < 1) {
    return absl::InvalidArgumentError("k_aug must be at least 1");
  }
  const int64_t batch = plan.TotalBatch();
  if (inputs.rows != batch) {
    return absl::InvalidArgumentError(absl::StrCat(
        "plan expects a batch of ", batch, " examples, got ", inputs.rows));
  }
  const int64_t n_dev = plan.n_devices;
  const int64_t n_acc = plan.n_accum;
  const int64_t b_local = plan.local_batch;
  const double c = clip.clip_norm;
  const Vector xi = SharedNoise(noise.seed, dim);
  const double noise_scale = noise.sigma / static_cast<double>(batch);

  // noisy[d][s] = g_{d,s} + (sigma / B) xi, computed per device.
  std::vector<std::vector<Vector>> noisy(
      static_cast<size_t>(n_dev), std::vector<Vector>(static_cast<size_t>(n_acc)));
  std::vector<absl::Status> device_status(static_cast<size_t>(n_dev));
  auto run_device = [&](int64_t d) {
    for (int64_t s = 0; s < n_acc; ++s) {
      Vector local(dim, 0.0);
      for (int64_t i = 0; i < b_local; ++i) {
        const int64_t index = (d * n_acc + s) * b_local + i;
        const auto x = inputs.Row(index);
        Vector mean(dim, 0.0);
        for (int64_t j = 0; j < options.k_aug; ++j) {
          const Vector xa = options.augment(
              x, AugmentKey(options.augment_seed, index, j));
          const Vector g = gradient(index, xa);
          if (g.size() != dim) {
            device_status[d] = absl::InvalidArgumentError(absl::StrCat(
                "gradient of example ", index, " has dimension ", g.size(),
                ", expected ", dim));
            return;
          }
          for (size_t q = 0; q < dim; ++q) mean[q] += g[q];
        }
        for (double& v : mean) v /= static_cast<double>(options.k_aug);
        const Vector clipped = Clip(mean, c);
        for (size_t q = 0; q < dim; ++q) local[q] += clipped[q] / c;
      }
      for (size_t q = 0; q < dim; ++q) {
        local[q] = local[q] / static_cast<double>(b_local) + noise_scale * xi[q];
      }
      noisy[d][s] = std::move(local);
    }
  };
  const int workers = std::max(1, std::min<int>(options.workers,
                                                static_cast<int>(n_dev)));
  if (workers == 1) {
    for (int64_t d = 0; d < n_dev; ++d) run_device(d);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int64_t d = w; d < n_dev; d += workers) run_device(d);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& st : device_status) {
    if (!st.ok()) return st;
  }
  // Synchronise across devices, then Welford-average across steps. This
  // part runs in a fixed order so the result is independent of `workers`.
  Vector g(dim, 0.0);
  for (int64_t s = 0; s < n_acc; ++s) {
    Vector bar(dim, 0.0);
    for (int64_t d = 0; d < n_dev; ++d) {
      for (size_t q = 0; q < dim; ++q) bar[q] += noisy[d][s][q];
    }
    for (double& v : bar) v /= static_cast<double>(n_dev);
    g = WelfordUpdate(g, bar, s + 1);
  }
  return g;
}

}  // namespace dpforge::privatizer

#endif  // DPFORGE_PRIVATIZER_HPP_
