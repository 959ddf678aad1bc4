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

// Small differentiable models: a linear classifier, a one-hidden-layer tanh
// MLP and a single 3x3 "valid" convolution layer with tanh followed by a
// linear read-out. Parameters live in one flat vector.
//
// The forward and backward passes are templated on the scalar type. With
// T = double they give the loss and its exact parameter gradient; with
// T = Dual they additionally carry a directional derivative with respect to
// the input, which the gradient-inversion attack uses.

#ifndef DPFORGE_MODELS_HPP_
#define DPFORGE_MODELS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/dual.hpp"
#include "dpforge/numeric.hpp"
#include "dpforge/random.hpp"

namespace dpforge::models {

enum class Architecture { kLinear, kMlp, kConv };

// Softmax cross-entropy over classes, or independent sigmoid cross-entropy
// per label (multilabel).
enum class Head { kSoftmax, kSigmoid };

// Ternary label codes of multilabel datasets.
enum LabelCode : int32_t { kNegative = 0, kPositive = 1, kUncertain = 2 };

struct LayerShape {
  std::string name;
  std::vector<int64_t> dims;

  int64_t Size() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
  }
  bool operator==(const LayerShape&) const = default;
};

struct ModelSpec {
  Architecture arch = Architecture::kLinear;
  Head head = Head::kSoftmax;
  int64_t input_dim = 2;    // flattened input length
  int64_t num_outputs = 2;  // classes (softmax) or labels (sigmoid)
  int64_t hidden = 16;      // MLP hidden units
  // Convolution input is channels x height x width, channel-major.
  int64_t channels = 1;
  int64_t height = 0;
  int64_t width = 0;
  int64_t filters = 4;

  absl::Status Validate() const {
    if (input_dim < 1 || num_outputs < 1) {
      return absl::InvalidArgumentError(
          "input_dim and num_outputs must be positive");
    }
    if (head == Head::kSoftmax && num_outputs < 2) {
      return absl::InvalidArgumentError("softmax head needs >= 2 classes");
    }
    if (arch == Architecture::kMlp && hidden < 1) {
      return absl::InvalidArgumentError("hidden must be positive");
    }
    if (arch == Architecture::kConv) {
      if (height < 3 || width < 3 || channels < 1 || filters < 1) {
        return absl::InvalidArgumentError(
            "conv needs height, width >= 3 and positive channels, filters");
      }
      if (channels * height * width != input_dim) {
        return absl::InvalidArgumentError(absl::StrCat(
            "conv input_dim ", input_dim, " != channels*height*width ",
            channels * height * width));
      }
    }
    return absl::OkStatus();
  }

  std::vector<LayerShape> Shapes() const {
    switch (arch) {
      case Architecture::kLinear:
        return {{"weights", {num_outputs, input_dim}}, {"bias", {num_outputs}}};
      case Architecture::kMlp:
        return {{"hidden_weights", {hidden, input_dim}},
                {"hidden_bias", {hidden}},
                {"output_weights", {num_outputs, hidden}},
                {"output_bias", {num_outputs}}};
      case Architecture::kConv:
        return {{"filters", {filters, channels, 3, 3}},
                {"filter_bias", {filters}},
                {"output_weights",
                 {num_outputs, filters * (height - 2) * (width - 2)}},
                {"output_bias", {num_outputs}}};
    }
    return {};
  }

  int64_t NumParams() const {
    int64_t n = 0;
    for (const auto& s : Shapes()) n += s.Size();
    return n;
  }
};

struct ModelParams {
  Vector flat;
  std::vector<LayerShape> shapes;

  absl::Status Validate() const {
    int64_t n = 0;
    for (const auto& s : shapes) n += s.Size();
    if (n != static_cast<int64_t>(flat.size())) {
      return absl::InvalidArgumentError(absl::StrCat(
          "parameter vector has ", flat.size(), " entries, shapes need ", n));
    }
    return absl::OkStatus();
  }
  bool operator==(const ModelParams&) const = default;
};

inline ModelParams ZeroParams(const ModelSpec& spec) {
  return {Vector(static_cast<size_t>(spec.NumParams()), 0.0), spec.Shapes()};
}

// Weights ~ N(0, 1 / fan_in), biases zero; deterministic in `seed`.
inline ModelParams InitParams(const ModelSpec& spec, uint64_t seed) {
  ModelParams p = ZeroParams(spec);
  Rng rng(DeriveKey(seed, {0x1417}));
  size_t offset = 0;
  for (const auto& s : p.shapes) {
    const size_t n = static_cast<size_t>(s.Size());
    if (s.dims.size() >= 2) {
      const double fan_in = static_cast<double>(s.Size() / s.dims[0]);
      const double scale = 1.0 / std::sqrt(fan_in);
      for (size_t i = 0; i < n; ++i) p.flat[offset + i] = scale * rng.Normal();
    }
    offset += n;
  }
  return p;
}

// (1 - s) * onehot(label) + s / K.
inline Vector SmoothedOneHot(int64_t label, int64_t num_classes,
                             double smoothing) {
  Vector t(static_cast<size_t>(num_classes),
           smoothing / static_cast<double>(num_classes));
  t[static_cast<size_t>(label)] += 1.0 - smoothing;
  return t;
}

// Per-label binary targets. Certain labels y get (1 - s) y + s / 2.
// Uncertain labels are mapped to positive or negative by `uncertain_to`
// and smoothed with `uncertain_smoothing` instead.
inline Vector MultilabelTarget(std::span<const int32_t> codes,
                               std::span<const int32_t> uncertain_to,
                               double smoothing, double uncertain_smoothing) {
  Vector t(codes.size());
  for (size_t k = 0; k < codes.size(); ++k) {
    if (codes[k] == kUncertain) {
      const double mapped = k < uncertain_to.size() && uncertain_to[k] == kPositive;
      t[k] = (1.0 - uncertain_smoothing) * mapped + 0.5 * uncertain_smoothing;
    } else {
      t[k] = (1.0 - smoothing) * (codes[k] == kPositive) + 0.5 * smoothing;
    }
  }
  return t;
}

namespace internal {

using std::log;
using std::exp;
using std::log1p;
using std::tanh;

template <typename T>
T Softplus(const T& z) {
  if (ValueOf(z) > 0) return z + log1p(exp(-z));
  return log1p(exp(z));
}

template <typename T>
T Sigmoid(const T& z) {
  if (ValueOf(z) >= 0) return T(1.0) / (T(1.0) + exp(-z));
  const T e = exp(z);
  return e / (T(1.0) + e);
}

// Intermediate activations kept for the backward pass.
template <typename T>
struct Activations {
  std::vector<T> hidden;  // tanh outputs (MLP units or conv feature map)
  std::vector<T> logits;
};

template <typename T>
void ForwardPass(const ModelSpec& spec, std::span<const T> w,
                 std::span<const T> x, Activations<T>& act) {
  const int64_t d = spec.input_dim;
  const int64_t k_out = spec.num_outputs;
  act.logits.assign(static_cast<size_t>(k_out), T(0.0));
  switch (spec.arch) {
    case Architecture::kLinear: {
      const T* weights = w.data();
      const T* bias = weights + k_out * d;
      for (int64_t k = 0; k < k_out; ++k) {
        T z = bias[k];
        for (int64_t j = 0; j < d; ++j) z += weights[k * d + j] * x[j];
        act.logits[k] = z;
      }
      return;
    }
    case Architecture::kMlp: {
      const int64_t h = spec.hidden;
      const T* w1 = w.data();
      const T* b1 = w1 + h * d;
      const T* w2 = b1 + h;
      const T* b2 = w2 + k_out * h;
      act.hidden.assign(static_cast<size_t>(h), T(0.0));
      for (int64_t u = 0; u < h; ++u) {
        T a = b1[u];
        for (int64_t j = 0; j < d; ++j) a += w1[u * d + j] * x[j];
        act.hidden[u] = tanh(a);
      }
      for (int64_t k = 0; k < k_out; ++k) {
        T z = b2[k];
        for (int64_t u = 0; u < h; ++u) z += w2[k * h + u] * act.hidden[u];
        act.logits[k] = z;
      }
      return;
    }
    case Architecture::kConv: {
      const int64_t f_n = spec.filters;
      const int64_t ch = spec.channels;
      const int64_t ht = spec.height;
      const int64_t wd = spec.width;
      const int64_t ho = ht - 2;
      const int64_t wo = wd - 2;
      const int64_t m = f_n * ho * wo;
      const T* kern = w.data();
      const T* kb = kern + f_n * ch * 9;
      const T* w2 = kb + f_n;
      const T* b2 = w2 + k_out * m;
      act.hidden.assign(static_cast<size_t>(m), T(0.0));
      for (int64_t f = 0; f < f_n; ++f) {
        for (int64_t r = 0; r < ho; ++r) {
          for (int64_t c = 0; c < wo; ++c) {
            T a = kb[f];
            for (int64_t q = 0; q < ch; ++q) {
              for (int64_t u = 0; u < 3; ++u) {
                for (int64_t v = 0; v < 3; ++v) {
                  a += kern[((f * ch + q) * 3 + u) * 3 + v] *
                       x[(q * ht + r + u) * wd + c + v];
                }
              }
            }
            act.hidden[(f * ho + r) * wo + c] = tanh(a);
          }
        }
      }
      for (int64_t k = 0; k < k_out; ++k) {
        T z = b2[k];
        for (int64_t i = 0; i < m; ++i) z += w2[k * m + i] * act.hidden[i];
        act.logits[k] = z;
      }
      return;
    }
  }
}

// Loss of the logits against a soft target and its gradient dL/dz.
template <typename T>
T HeadLoss(Head head, const std::vector<T>& z, std::span<const double> target,
           std::vector<T>& dz) {
  const size_t k_out = z.size();
  dz.assign(k_out, T(0.0));
  T loss(0.0);
  if (head == Head::kSoftmax) {
    T m = z[0];
    for (const T& v : z) {
      if (m < v) m = v;
    }
    T sum(0.0);
    for (const T& v : z) sum += exp(v - m);
    const T lse = m + log(sum);
    double mass = 0.0;
    for (size_t k = 0; k < k_out; ++k) {
      mass += target[k];
      loss -= T(target[k]) * z[k];
    }
    loss += T(mass) * lse;
    for (size_t k = 0; k < k_out; ++k) {
      dz[k] = T(mass) * exp(z[k] - lse) - T(target[k]);
    }
  } else {
    for (size_t k = 0; k < k_out; ++k) {
      loss += Softplus(z[k]) - T(target[k]) * z[k];
      dz[k] = Sigmoid(z[k]) - T(target[k]);
    }
  }
  return loss;
}

template <typename T>
T LossAndGradient(const ModelSpec& spec, std::span<const T> w,
                  std::span<const T> x, std::span<const double> target,
                  std::vector<T>* grad) {
  Activations<T> act;
  ForwardPass(spec, w, x, act);
  std::vector<T> dz;
  const T loss = HeadLoss(spec.head, act.logits, target, dz);
  if (grad == nullptr) return loss;
  grad->assign(w.size(), T(0.0));
  T* g = grad->data();
  const int64_t d = spec.input_dim;
  const int64_t k_out = spec.num_outputs;
  switch (spec.arch) {
    case Architecture::kLinear: {
      for (int64_t k = 0; k < k_out; ++k) {
        for (int64_t j = 0; j < d; ++j) g[k * d + j] = dz[k] * x[j];
        g[k_out * d + k] = dz[k];
      }
      break;
    }
    case Architecture::kMlp: {
      const int64_t h = spec.hidden;
      const T* w2 = w.data() + h * d + h;
      T* g1 = g;
      T* gb1 = g1 + h * d;
      T* g2 = gb1 + h;
      T* gb2 = g2 + k_out * h;
      for (int64_t k = 0; k < k_out; ++k) {
        for (int64_t u = 0; u < h; ++u) g2[k * h + u] = dz[k] * act.hidden[u];
        gb2[k] = dz[k];
      }
      for (int64_t u = 0; u < h; ++u) {
        T back(0.0);
        for (int64_t k = 0; k < k_out; ++k) back += w2[k * h + u] * dz[k];
        const T da = back * (T(1.0) - act.hidden[u] * act.hidden[u]);
        for (int64_t j = 0; j < d; ++j) g1[u * d + j] = da * x[j];
        gb1[u] = da;
      }
      break;
    }
    case Architecture::kConv: {
      const int64_t f_n = spec.filters;
      const int64_t ch = spec.channels;
      const int64_t ht = spec.height;
      const int64_t wd = spec.width;
      const int64_t ho = ht - 2;
      const int64_t wo = wd - 2;
      const int64_t m = f_n * ho * wo;
      const T* w2 = w.data() + f_n * ch * 9 + f_n;
      T* gk = g;
      T* gkb = gk + f_n * ch * 9;
      T* g2 = gkb + f_n;
      T* gb2 = g2 + k_out * m;
      for (int64_t k = 0; k < k_out; ++k) {
        for (int64_t i = 0; i < m; ++i) g2[k * m + i] = dz[k] * act.hidden[i];
        gb2[k] = dz[k];
      }
      for (int64_t f = 0; f < f_n; ++f) {
        for (int64_t r = 0; r < ho; ++r) {
          for (int64_t c = 0; c < wo; ++c) {
            const int64_t i = (f * ho + r) * wo + c;
            T back(0.0);
            for (int64_t k = 0; k < k_out; ++k) back += w2[k * m + i] * dz[k];
            const T da = back * (T(1.0) - act.hidden[i] * act.hidden[i]);
            gkb[f] += da;
            for (int64_t q = 0; q < ch; ++q) {
              for (int64_t u = 0; u < 3; ++u) {
                for (int64_t v = 0; v < 3; ++v) {
                  gk[((f * ch + q) * 3 + u) * 3 + v] +=
                      da * x[(q * ht + r + u) * wd + c + v];
                }
              }
            }
          }
        }
      }
      break;
    }
  }
  return loss;
}

inline absl::Status CheckShapes(const ModelSpec& spec, const ModelParams& p,
                                size_t input_size, size_t target_size) {
  if (auto st = spec.Validate(); !st.ok()) return st;
  if (static_cast<int64_t>(p.flat.size()) != spec.NumParams()) {
    return absl::InvalidArgumentError(
        absl::StrCat("model expects ", spec.NumParams(), " parameters, got ",
                     p.flat.size()));
  }
  if (static_cast<int64_t>(input_size) != spec.input_dim) {
    return absl::InvalidArgumentError(absl::StrCat(
        "input has dimension ", input_size, ", model expects ", spec.input_dim));
  }
  if (target_size != 0 && static_cast<int64_t>(target_size) != spec.num_outputs) {
    return absl::InvalidArgumentError(
        absl::StrCat("target has dimension ", target_size, ", model expects ",
                     spec.num_outputs));
  }
  return absl::OkStatus();
}

}  // namespace internal

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

// Loss of one example against a soft target, with its exact gradient.
inline absl::StatusOr<LossGrad> LossAndGrad(const ModelSpec& spec,
                                            const ModelParams& params,
                                            std::span<const double> x,
                                            std::span<const double> target) {
  if (auto st = internal::CheckShapes(spec, params, x.size(), target.size());
      !st.ok()) {
    return st;
  }
  LossGrad out;
  out.loss = internal::LossAndGradient<double>(
      spec, params.flat, x, target, &out.grad);
  return out;
}

inline absl::StatusOr<double> Loss(const ModelSpec& spec,
                                   const ModelParams& params,
                                   std::span<const double> x,
                                   std::span<const double> target) {
  if (auto st = internal::CheckShapes(spec, params, x.size(), target.size());
      !st.ok()) {
    return st;
  }
  return internal::LossAndGradient<double>(spec, params.flat, x, target,
                                           nullptr);
}

// Class probabilities (softmax) or per-label probabilities (sigmoid).
inline absl::StatusOr<Vector> Scores(const ModelSpec& spec,
                                     const ModelParams& params,
                                     std::span<const double> x) {
  if (auto st = internal::CheckShapes(spec, params, x.size(), 0); !st.ok()) {
    return st;
  }
  internal::Activations<double> act;
  internal::ForwardPass<double>(spec, params.flat, x, act);
  Vector out(act.logits.size());
  if (spec.head == Head::kSoftmax) {
    const double lse = LogSumExp(act.logits);
    for (size_t k = 0; k < out.size(); ++k) out[k] = std::exp(act.logits[k] - lse);
  } else {
    for (size_t k = 0; k < out.size(); ++k) {
      out[k] = internal::Sigmoid(act.logits[k]);
    }
  }
  return out;
}

}  // namespace dpforge::models

#endif  // DPFORGE_MODELS_HPP_
