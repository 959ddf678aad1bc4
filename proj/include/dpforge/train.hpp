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

// DP-SGD and plain SGD training loops with a constant learning rate,
// parameter EMA, evenly spaced checkpoints and checkpoint aggregation.
//
// The DP-SGD update is w <- w - lr * g with g the privatized gradient of
// the privatizer module; because contributions are normalised by C, a plain
// SGD run with rate eta corresponds to DP-SGD with rate eta * C when no
// clipping happens and sigma = 0.

#ifndef DPFORGE_TRAIN_HPP_
#define DPFORGE_TRAIN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/accountant.hpp"
#include "dpforge/data.hpp"
#include "dpforge/models.hpp"
#include "dpforge/numeric.hpp"
#include "dpforge/privatizer.hpp"
#include "dpforge/random.hpp"

namespace dpforge::train {

using models::ModelParams;
using models::ModelSpec;

struct TrainConfig {
  double learning_rate = 0.1;
  int64_t batch = 32;
  int64_t steps = 100;
  double clip_norm = 1.0;
  double sigma = 0.0;
  double label_smoothing = 0.0;
  // Multilabel only: per-label mapping of uncertain codes and their smoothing.
  std::vector<int32_t> uncertain_to;
  double uncertain_smoothing = 0.2;
  double ema_rate = 0.0;
  bool ema_warmup = true;
  uint64_t seed = 0;
  // false: plain minibatch SGD without clipping or noise.
  bool private_sgd = true;
  // When set, sigma is calibrated to this budget before training.
  std::optional<accountant::PrivacyBudget> budget;
  // Delta used to report epsilon when no budget is given; 0 means 1/N.
  double report_delta = 0.0;
  int64_t num_checkpoints = 10;
  int64_t k_aug = 1;
  int workers = 1;
  // Upper bound on steps * batch (per-example gradient evaluations).
  int64_t compute_cap = int64_t{1} << 34;

  absl::Status Validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
      return absl::InvalidArgumentError("learning_rate must be positive");
    }
    if (batch < 1 || steps < 1) {
      return absl::InvalidArgumentError("batch and steps must be positive");
    }
    if (!(clip_norm > 0)) {
      return absl::InvalidArgumentError("clip_norm must be positive");
    }
    if (!(sigma >= 0)) return absl::InvalidArgumentError("sigma must be >= 0");
    if (!(label_smoothing >= 0 && label_smoothing < 1) ||
        !(uncertain_smoothing >= 0 && uncertain_smoothing < 1)) {
      return absl::InvalidArgumentError("label smoothing must lie in [0, 1)");
    }
    if (!(ema_rate >= 0 && ema_rate < 1)) {
      return absl::InvalidArgumentError("ema_rate must lie in [0, 1)");
    }
    if (num_checkpoints < 1 || k_aug < 1) {
      return absl::InvalidArgumentError(
          "num_checkpoints and k_aug must be positive");
    }
    if (steps > compute_cap / batch) {
      return absl::InvalidArgumentError(absl::StrCat(
          "steps * batch = ", steps * batch, " exceeds compute cap ",
          compute_cap));
    }
    if (budget) return budget->Validate();
    return absl::OkStatus();
  }
};

struct Checkpoint {
  int64_t step = 0;
  ModelParams params;
  ModelParams ema_params;
  bool operator==(const Checkpoint&) const = default;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<double> loss_trace;  // mean batch loss before each update
  double sigma = 0.0;
  double epsilon = 0.0;  // +inf for noiseless private runs, 0 if non-private
  double delta = 0.0;
};

// Batch of inputs with their soft targets.
struct Batch {
  Matrix inputs;
  Matrix targets;
};

inline Batch MakeBatch(const data::Dataset& ds, std::span<const int64_t> rows,
                       const TrainConfig& config) {
  Batch b{Matrix(static_cast<int64_t>(rows.size()), ds.dim()), Matrix()};
  for (size_t r = 0; r < rows.size(); ++r) {
    const auto x = ds.features.Row(rows[r]);
    std::copy(x.begin(), x.end(), b.inputs.Row(static_cast<int64_t>(r)).begin());
    const Vector t = data::Target(ds, rows[r], config.label_smoothing,
                                  config.uncertain_to, config.uncertain_smoothing);
    if (r == 0) b.targets = Matrix(static_cast<int64_t>(rows.size()),
                                   static_cast<int64_t>(t.size()));
    std::copy(t.begin(), t.end(), b.targets.Row(static_cast<int64_t>(r)).begin());
  }
  return b;
}

// ema' = r ema + (1 - r) current, r = min(rate, (1 + step) / (10 + step))
// with warm-up, else rate.
inline ModelParams EmaUpdate(const ModelParams& ema, const ModelParams& current,
                             double rate, int64_t step, bool warmup) {
  double r = rate;
  if (warmup) {
    r = std::min(rate, (1.0 + static_cast<double>(step)) /
                           (10.0 + static_cast<double>(step)));
  }
  ModelParams out = ema;
  for (size_t i = 0; i < out.flat.size(); ++i) {
    out.flat[i] = r * ema.flat[i] + (1.0 - r) * current.flat[i];
  }
  return out;
}

inline absl::StatusOr<double> MeanBatchLoss(const ModelSpec& spec,
                                            const ModelParams& params,
                                            const Batch& batch) {
  double total = 0.0;
  for (int64_t i = 0; i < batch.inputs.rows; ++i) {
    auto l = models::Loss(spec, params, batch.inputs.Row(i), batch.targets.Row(i));
    if (!l.ok()) return l.status();
    total += *l;
  }
  return total / static_cast<double>(std::max<int64_t>(1, batch.inputs.rows));
}

// w - lr * mean_i grad_i.
inline absl::StatusOr<ModelParams> SgdStep(const ModelSpec& spec,
                                           const ModelParams& params,
                                           const Batch& batch,
                                           double learning_rate) {
  Vector mean(params.flat.size(), 0.0);
  for (int64_t i = 0; i < batch.inputs.rows; ++i) {
    auto lg = models::LossAndGrad(spec, params, batch.inputs.Row(i),
                                  batch.targets.Row(i));
    if (!lg.ok()) return lg.status();
    for (size_t j = 0; j < mean.size(); ++j) mean[j] += lg->grad[j];
  }
  ModelParams out = params;
  const double scale = learning_rate / static_cast<double>(batch.inputs.rows);
  for (size_t j = 0; j < mean.size(); ++j) out.flat[j] -= scale * mean[j];
  return out;
}

// Seed of the shared noise sample of update `step_index`.
inline uint64_t NoiseSeed(uint64_t seed, int64_t step_index) {
  return DeriveKey(seed, {0x4015E, static_cast<uint64_t>(step_index)});
}

// One DP-SGD update. The batch is laid out over `plan` (default: one device,
// one accumulation step); the noise is determined by (seed, step_index).
inline absl::StatusOr<ModelParams> DpSgdStep(
    const ModelSpec& spec, const ModelParams& params, const Batch& batch,
    const TrainConfig& config, int64_t step_index,
    std::optional<privatizer::ShardingPlan> plan = std::nullopt) {
  if (batch.inputs.rows != config.batch) {
    return absl::InvalidArgumentError(absl::StrCat(
        "batch has ", batch.inputs.rows, " examples, config expects ",
        config.batch));
  }
  const privatizer::ShardingPlan p =
      plan.value_or(privatizer::ShardingPlan{1, 1, config.batch});
  absl::Status grad_status;
  auto gradient = [&](int64_t index, std::span<const double> x) {
    auto lg = models::LossAndGrad(spec, params, x, batch.targets.Row(index));
    if (!lg.ok()) {
      grad_status = lg.status();
      return Vector();
    }
    return std::move(lg->grad);
  };
  privatizer::ShardedOptions options;
  options.k_aug = config.k_aug;
  options.augment_seed = DeriveKey(config.seed, {0xA06, static_cast<uint64_t>(step_index)});
  options.workers = 1;  // gradient callback records errors without locking
  auto g = privatizer::PrivatizeSharded(
      batch.inputs, gradient, params.flat.size(), p,
      privatizer::ClipSpec{config.clip_norm},
      privatizer::NoiseSpec{config.sigma, NoiseSeed(config.seed, step_index)},
      options);
  if (!grad_status.ok()) return grad_status;
  if (!g.ok()) return g.status();
  ModelParams out = params;
  for (size_t j = 0; j < out.flat.size(); ++j) {
    out.flat[j] -= config.learning_rate * (*g)[j];
  }
  return out;
}

// Steps at which checkpoints are taken: ceil(i T / n) for i = 1..n with
// n = min(num_checkpoints, T); the last one is T.
inline std::vector<int64_t> CheckpointSteps(int64_t steps, int64_t count) {
  const int64_t n = std::min(steps, count);
  std::vector<int64_t> out;
  for (int64_t i = 1; i <= n; ++i) out.push_back((i * steps + n - 1) / n);
  return out;
}

// Trains on the train split. Batches are drawn uniformly without
// replacement, independently at every step.
inline absl::StatusOr<TrainResult> Train(
    const data::Dataset& ds, const ModelSpec& spec, TrainConfig config,
    std::optional<privatizer::ShardingPlan> plan = std::nullopt,
    std::optional<ModelParams> init = std::nullopt) {
  if (auto st = config.Validate(); !st.ok()) return st;
  if (auto st = spec.Validate(); !st.ok()) return st;
  if (auto st = ds.Validate(); !st.ok()) return st;
  if (ds.dim() != spec.input_dim) {
    return absl::InvalidArgumentError(absl::StrCat(
        "dataset dimension ", ds.dim(), " != model input ", spec.input_dim));
  }
  if (plan) {
    if (auto st = plan->Validate(); !st.ok()) return st;
    if (plan->TotalBatch() != config.batch) {
      return absl::InvalidArgumentError(absl::StrCat(
          "plan total batch ", plan->TotalBatch(), " != config batch ",
          config.batch));
    }
  }
  const std::vector<int64_t> train_rows = ds.IndicesOf(data::Split::kTrain);
  const int64_t n = static_cast<int64_t>(train_rows.size());
  if (n < config.batch) {
    return absl::InvalidArgumentError(absl::StrCat(
        "batch ", config.batch, " exceeds ", n, " training examples"));
  }
  TrainResult result;
  const double q = static_cast<double>(config.batch) / static_cast<double>(n);
  if (config.private_sgd) {
    result.delta = config.budget ? config.budget->delta
                   : config.report_delta > 0 ? config.report_delta
                                             : 1.0 / static_cast<double>(n);
    if (config.budget) {
      auto cal = accountant::CalibrateSigma(*config.budget, q, config.steps);
      if (!cal.ok()) return cal.status();
      config.sigma = cal->sigma;
      result.epsilon = cal->epsilon;
    } else if (config.sigma > 0) {
      auto eps = accountant::EpsilonForMechanism(
          {config.sigma, q, config.steps}, result.delta);
      result.epsilon = eps.ok() ? *eps : kInf;
    } else {
      result.epsilon = kInf;
    }
  }
  result.sigma = config.private_sgd ? config.sigma : 0.0;

  ModelParams params = init.value_or(models::ZeroParams(spec));
  if (auto st = params.Validate(); !st.ok()) return st;
  ModelParams ema = params;
  const auto ckpt_steps = CheckpointSteps(config.steps, config.num_checkpoints);
  size_t next_ckpt = 0;
  for (int64_t t = 0; t < config.steps; ++t) {
    Rng rng(DeriveKey(config.seed, {0xBA7C, static_cast<uint64_t>(t)}));
    const auto picks =
        SampleWithoutReplacement(rng, static_cast<size_t>(n),
                                 static_cast<size_t>(config.batch));
    std::vector<int64_t> rows;
    rows.reserve(picks.size());
    for (size_t k : picks) rows.push_back(train_rows[k]);
    const Batch batch = MakeBatch(ds, rows, config);
    auto loss = MeanBatchLoss(spec, params, batch);
    if (!loss.ok()) return loss.status();
    result.loss_trace.push_back(*loss);
    auto next = config.private_sgd
                    ? DpSgdStep(spec, params, batch, config, t, plan)
                    : SgdStep(spec, params, batch, config.learning_rate);
    if (!next.ok()) return next.status();
    params = *std::move(next);
    if (auto st = CheckFinite(params.flat, "parameters"); !st.ok()) {
      return absl::InternalError(
          absl::StrCat("training diverged at step ", t, ": ", st.message()));
    }
    ema = EmaUpdate(ema, params, config.ema_rate, t, config.ema_warmup);
    if (next_ckpt < ckpt_steps.size() && t + 1 == ckpt_steps[next_ckpt]) {
      result.checkpoints.push_back({t + 1, params, ema});
      ++next_ckpt;
    }
  }
  return result;
}

// Score matrix (rows = inputs) of one parameter vector.
inline absl::StatusOr<Matrix> Predict(const ModelSpec& spec,
                                      const ModelParams& params,
                                      const Matrix& inputs) {
  Matrix out(inputs.rows, spec.num_outputs);
  for (int64_t i = 0; i < inputs.rows; ++i) {
    auto s = models::Scores(spec, params, inputs.Row(i));
    if (!s.ok()) return s.status();
    std::copy(s->begin(), s->end(), out.Row(i).begin());
  }
  return out;
}

// Mean over checkpoints of the scores of their EMA parameters.
inline absl::StatusOr<Matrix> AggregatePredictions(
    const ModelSpec& spec, std::span<const Checkpoint> checkpoints,
    const Matrix& inputs) {
  if (checkpoints.empty()) {
    return absl::InvalidArgumentError("no checkpoints to aggregate");
  }
  Matrix total(inputs.rows, spec.num_outputs, 0.0);
  for (const auto& c : checkpoints) {
    auto s = Predict(spec, c.ema_params, inputs);
    if (!s.ok()) return s.status();
    for (size_t i = 0; i < total.data.size(); ++i) total.data[i] += s->data[i];
  }
  for (double& v : total.data) v /= static_cast<double>(checkpoints.size());
  return total;
}

// Fraction of rows whose argmax score equals the class label.
inline double Accuracy(const Matrix& scores, std::span<const int32_t> labels) {
  if (scores.rows == 0) return 0.0;
  int64_t hit = 0;
  for (int64_t i = 0; i < scores.rows; ++i) {
    const auto row = scores.Row(i);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    hit += best == labels[static_cast<size_t>(i)];
  }
  return static_cast<double>(hit) / static_cast<double>(scores.rows);
}

}  // namespace dpforge::train

#endif  // DPFORGE_TRAIN_HPP_
