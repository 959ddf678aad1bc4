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

// Gradient-inversion attacks on a single-example update.
//
// For a linear model with cross-entropy loss the weight gradient is the
// outer product (p - y) x^T and the bias gradient is p - y, so any row of
// the weight gradient divided by its bias entry returns x exactly. The
// general attack searches for an input whose gradient matches the observed
// one by gradient descent on ||g_target - g(z)||^2. In privatized mode the
// model gradient is mapped through clip_C(.) / C first, matching what a
// DP-SGD update with batch size one exposes apart from its noise.

#ifndef DPFORGE_ATTACKS_HPP_
#define DPFORGE_ATTACKS_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/dual.hpp"
#include "dpforge/models.hpp"
#include "dpforge/numeric.hpp"
#include "dpforge/random.hpp"

namespace dpforge::attacks {

inline constexpr double kDivergence = 1e12;

// Recovers x from the gradient of a single example through a linear layer.
inline absl::StatusOr<Vector> InvertLinearGradient(const Matrix& grad_weights,
                                                   std::span<const double> grad_bias) {
  if (static_cast<int64_t>(grad_bias.size()) != grad_weights.rows) {
    return absl::InvalidArgumentError(absl::StrCat(
        grad_bias.size(), " bias gradients for ", grad_weights.rows, " rows"));
  }
  int64_t best = -1;
  double best_mag = 1e-12;
  for (int64_t k = 0; k < grad_weights.rows; ++k) {
    if (std::abs(grad_bias[k]) > best_mag) {
      best_mag = std::abs(grad_bias[k]);
      best = k;
    }
  }
  if (best < 0) {
    return absl::FailedPreconditionError(
        "gradient is not invertible: all bias gradients are ~0");
  }
  Vector x(static_cast<size_t>(grad_weights.cols));
  for (int64_t j = 0; j < grad_weights.cols; ++j) {
    x[j] = grad_weights(best, j) / grad_bias[best];
  }
  return x;
}

// Splits a flat linear-model gradient into its weight matrix and bias.
inline absl::StatusOr<Vector> InvertLinearFlat(const models::ModelSpec& spec,
                                               std::span<const double> grad) {
  if (spec.arch != models::Architecture::kLinear ||
      static_cast<int64_t>(grad.size()) != spec.NumParams()) {
    return absl::InvalidArgumentError(
        "closed-form inversion needs a flat linear-model gradient");
  }
  Matrix w(spec.num_outputs, spec.input_dim);
  std::copy(grad.begin(), grad.begin() + w.data.size(), w.data.begin());
  return InvertLinearGradient(w, grad.subspan(w.data.size()));
}

struct ReconstructionConfig {
  int64_t iterations = 100000;
  double step_size = 0.1;
  uint64_t init_seed = 0;
  Vector target_gradient;
  // Soft label of the attacked example; empty means "infer from the
  // gradient" (the class with the most negative output-bias gradient).
  Vector label;
  bool privatized = false;
  double clip_norm = 1.0;      // C, used when privatized
  double tolerance = 0.0;      // stop once the objective is at or below
  double init_scale = 1.0;     // z_0 ~ U[-init_scale, init_scale]^d

  absl::Status Validate() const {
    if (iterations < 1) return absl::InvalidArgumentError("iterations must be >= 1");
    if (!(step_size > 0)) return absl::InvalidArgumentError("step_size must be positive");
    if (privatized && !(clip_norm > 0)) {
      return absl::InvalidArgumentError("clip_norm must be positive");
    }
    if (!(init_scale > 0)) return absl::InvalidArgumentError("init_scale must be positive");
    return CheckFinite(target_gradient, "target gradient");
  }
};

struct ReconstructionResult {
  Vector candidate;
  std::vector<double> trace;  // objective at z_0, z_1, ...
  bool diverged = false;
  bool converged = false;
};

namespace internal {

template <typename T>
T Objective(const models::ModelSpec& spec, std::span<const T> w,
            std::span<const T> z, std::span<const double> label,
            std::span<const double> target, bool privatized, double clip) {
  using std::sqrt;
  std::vector<T> g;
  models::internal::LossAndGradient<T>(spec, w, z, label, &g);
  if (privatized) {
    T sq(0.0);
    for (const T& v : g) sq += v * v;
    const T norm = sqrt(sq);
    // clip_C(g) / C = g / max(C, ||g||).
    const T scale = norm > T(clip) ? T(1.0) / norm : T(1.0 / clip);
    for (T& v : g) v *= scale;
  }
  T acc(0.0);
  for (size_t i = 0; i < g.size(); ++i) {
    const T r = T(target[i]) - g[i];
    acc += r * r;
  }
  return acc;
}

inline std::vector<Dual> Lift(std::span<const double> v) {
  std::vector<Dual> out;
  out.reserve(v.size());
  for (double x : v) out.emplace_back(x);
  return out;
}

}  // namespace internal

inline Vector InferLabel(const models::ModelSpec& spec,
                         std::span<const double> grad) {
  // The output bias is the last block of every supported layout.
  const auto bias = grad.subspan(grad.size() - spec.num_outputs);
  if (spec.head == models::Head::kSigmoid) {
    Vector y(bias.size());
    for (size_t k = 0; k < bias.size(); ++k) y[k] = bias[k] < 0 ? 1.0 : 0.0;
    return y;
  }
  const auto it = std::min_element(bias.begin(), bias.end());
  return models::SmoothedOneHot(it - bias.begin(), spec.num_outputs, 0.0);
}

// Objective value ||target - h(g(z))||^2 with h the identity or
// clip_C(.) / C.
inline absl::StatusOr<double> MatchObjective(const models::ModelSpec& spec,
                                             const models::ModelParams& params,
                                             std::span<const double> z,
                                             const ReconstructionConfig& config) {
  if (auto st = models::internal::CheckShapes(spec, params, z.size(),
                                              spec.num_outputs);
      !st.ok()) {
    return st;
  }
  const Vector label = config.label.empty()
                           ? InferLabel(spec, config.target_gradient)
                           : config.label;
  return internal::Objective<double>(spec, params.flat, z, label,
                                     config.target_gradient, config.privatized,
                                     config.clip_norm);
}

// Exact input gradient of the matching objective by forward-mode
// differentiation, one input coordinate per pass.
inline absl::StatusOr<Vector> MatchObjectiveGradient(
    const models::ModelSpec& spec, const models::ModelParams& params,
    std::span<const double> z, const ReconstructionConfig& config) {
  if (auto st = models::internal::CheckShapes(spec, params, z.size(),
                                              spec.num_outputs);
      !st.ok()) {
    return st;
  }
  const Vector label = config.label.empty()
                           ? InferLabel(spec, config.target_gradient)
                           : config.label;
  const std::vector<Dual> w = internal::Lift(params.flat);
  std::vector<Dual> zd = internal::Lift(z);
  Vector grad(z.size());
  for (size_t j = 0; j < z.size(); ++j) {
    zd[j].d = 1.0;
    grad[j] = internal::Objective<Dual>(spec, w, zd, label,
                                        config.target_gradient,
                                        config.privatized, config.clip_norm)
                  .d;
    zd[j].d = 0.0;
  }
  return grad;
}

inline Vector RandomInit(int64_t dim, uint64_t seed, double scale) {
  Rng rng(DeriveKey(seed, {0x1417}));
  Vector z(static_cast<size_t>(dim));
  for (double& v : z) v = scale * (2.0 * rng.Uniform() - 1.0);
  return z;
}

// Gradient descent on the matching objective from a random start. A step
// that would raise the objective is retried at half the step size, so the
// trace is non-increasing.
inline absl::StatusOr<ReconstructionResult> Reconstruct(
    const models::ModelSpec& spec, const models::ModelParams& params,
    const ReconstructionConfig& config) {
  if (auto st = config.Validate(); !st.ok()) return st;
  if (spec.arch == models::Architecture::kConv) {
    return absl::UnimplementedError(
        "reconstruction supports linear and MLP models only");
  }
  if (static_cast<int64_t>(config.target_gradient.size()) != spec.NumParams()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "target gradient has ", config.target_gradient.size(),
        " entries, model has ", spec.NumParams()));
  }
  if (!config.label.empty() &&
      static_cast<int64_t>(config.label.size()) != spec.num_outputs) {
    return absl::InvalidArgumentError("label width does not match the model");
  }
  ReconstructionResult r;
  r.candidate = RandomInit(spec.input_dim, config.init_seed, config.init_scale);
  auto f = MatchObjective(spec, params, r.candidate, config);
  if (!f.ok()) return f.status();
  double value = *f;
  r.trace.push_back(value);
  double step = config.step_size;
  for (int64_t it = 0; it < config.iterations; ++it) {
    if (!std::isfinite(value) || value > kDivergence) {
      r.diverged = true;
      return r;
    }
    if (value <= config.tolerance) {
      r.converged = true;
      return r;
    }
    auto g = MatchObjectiveGradient(spec, params, r.candidate, config);
    if (!g.ok()) return g.status();
    bool moved = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      Vector next = r.candidate;
      for (size_t j = 0; j < next.size(); ++j) next[j] -= step * (*g)[j];
      auto fn = MatchObjective(spec, params, next, config);
      if (!fn.ok()) return fn.status();
      if (*fn <= value) {
        r.candidate = std::move(next);
        value = *fn;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    r.trace.push_back(value);
    if (!moved) {  // stationary to machine precision
      r.converged = true;
      return r;
    }
  }
  return r;
}

inline double MeanSquaredError(std::span<const double> a,
                               std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace dpforge::attacks

#endif  // DPFORGE_ATTACKS_HPP_
