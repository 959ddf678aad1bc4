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

// Empirical epsilon lower bounds by membership inference on a canary.
//
// Phase I trains a few models per hyperparameter point on D and on
// D' = D + {canary}, fits a Gaussian to the canary losses of each arm and
// keeps the point whose two Gaussians are furthest apart in total
// variation. Phase II trains many models per arm at that point. A loss
// threshold ("member if loss <= tau") is chosen on a holdout subset, then
// TPR and FPR are measured on the remaining models and turned into
// one-sided Clopper-Pearson bounds. Any (eps, delta)-DP trainer satisfies
// TPR <= e^eps FPR + delta, so ln((TPR_lower - delta) / FPR_upper) is a
// lower bound on eps with the stated confidence. The confidence is split
// evenly between the two bounds.

#ifndef DPFORGE_AUDIT_HPP_
#define DPFORGE_AUDIT_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/accountant.hpp"
#include "dpforge/data.hpp"
#include "dpforge/fairness.hpp"
#include "dpforge/models.hpp"
#include "dpforge/numeric.hpp"
#include "dpforge/privatizer.hpp"
#include "dpforge/random.hpp"

namespace dpforge::audit {

using accountant::PrivacyBudget;

inline constexpr double kVarianceFloor = 1e-12;

// Total variation distance between N(mu1, s1^2) and N(mu2, s2^2). The
// densities cross where a quadratic vanishes; TV = P1(A) - P2(A) on the
// set A where the first density is larger.
inline absl::StatusOr<double> TvDistanceGaussian(double mu1, double s1,
                                                 double mu2, double s2) {
  if (!(s1 > 0) || !(s2 > 0) || !std::isfinite(mu1) || !std::isfinite(mu2)) {
    return absl::InvalidArgumentError(
        "tv_distance_gaussian needs finite means and positive scales");
  }
  if (s1 == s2) {
    return 2.0 * NormalCdf(std::abs(mu1 - mu2) / (2.0 * s1)) - 1.0;
  }
  // g(x) = log f1(x) - log f2(x) = a x^2 + b x + c.
  const double a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
  const double b = mu1 / (s1 * s1) - mu2 / (s2 * s2);
  const double c = 0.5 * mu2 * mu2 / (s2 * s2) - 0.5 * mu1 * mu1 / (s1 * s1) +
                   std::log(s2 / s1);
  // b^2 - 4ac > 0 whenever the scales differ.
  const double disc = std::sqrt(std::max(0.0, b * b - 4.0 * a * c));
  const double q = -0.5 * (b + std::copysign(disc, b));
  double r1 = q / a;
  double r2 = q != 0 ? c / q : -r1;
  if (r1 > r2) std::swap(r1, r2);
  auto mass_between = [&](double mu, double s) {
    return NormalCdf((r2 - mu) / s) - NormalCdf((r1 - mu) / s);
  };
  double p1 = mass_between(mu1, s1);
  double p2 = mass_between(mu2, s2);
  if (a > 0) {  // f1 is wider: it dominates outside [r1, r2]
    p1 = 1.0 - p1;
    p2 = 1.0 - p2;
  }
  return std::clamp(p1 - p2, 0.0, 1.0);
}

enum class Side { kLower, kUpper };

// One-sided exact binomial bound from Beta quantiles.
inline absl::StatusOr<double> ClopperPearson(int64_t successes, int64_t trials,
                                             double confidence, Side side) {
  if (trials < 1 || successes < 0 || successes > trials) {
    return absl::InvalidArgumentError(absl::StrCat(
        "need 0 <= successes <= trials, trials >= 1; got ", successes, " / ",
        trials));
  }
  if (!(confidence > 0 && confidence < 1)) {
    return absl::InvalidArgumentError("confidence must lie in (0, 1)");
  }
  const double k = static_cast<double>(successes);
  const double n = static_cast<double>(trials);
  if (side == Side::kLower) {
    if (successes == 0) return 0.0;
    return boost::math::ibeta_inv(k, n - k + 1.0, 1.0 - confidence);
  }
  if (successes == trials) return 1.0;
  return boost::math::ibeta_inv(k + 1.0, n - k, confidence);
}

struct EpsilonBound {
  double epsilon = 0.0;
  bool inconclusive = false;
};

// max(0, ln((tpr_lower - delta) / fpr_upper)).
inline EpsilonBound EpsilonLowerBound(double tpr_lower, double fpr_upper,
                                      double delta) {
  if (tpr_lower <= delta || fpr_upper <= 0) return {0.0, true};
  return {std::max(0.0, std::log((tpr_lower - delta) / fpr_upper)), false};
}

enum class CanaryKind { kBlank, kUniformNoise, kMislabeled };

inline const char* CanaryName(CanaryKind k) {
  switch (k) {
    case CanaryKind::kBlank:
      return "blank";
    case CanaryKind::kUniformNoise:
      return "uniform_noise";
    case CanaryKind::kMislabeled:
      return "mislabeled";
  }
  return "blank";
}

struct CanarySpec {
  CanaryKind kind = CanaryKind::kBlank;
  // The mislabeled canary is a typical `original_class` input labelled
  // `assigned_class`; the other kinds carry `assigned_class` as label.
  int32_t original_class = 0;
  int32_t assigned_class = 1;
  uint64_t payload_seed = 0;
};

struct HyperPoint {
  double learning_rate = 1.0;
  double clip_norm = 1.0;
  int64_t steps = 100;
  CanarySpec canary;
};

struct AuditConfig {
  PrivacyBudget nominal_budget;
  int64_t dataset_size = 100;
  int64_t models_phase1 = 50;
  int64_t models_phase2 = 4000;
  int64_t holdout_models = 1000;
  double confidence = 0.999;
  std::vector<HyperPoint> hyper_grid;
  uint64_t seed = 0;
  int workers = 1;

  absl::Status Validate() const {
    if (auto st = nominal_budget.Validate(); !st.ok()) return st;
    if (dataset_size < 1) return absl::InvalidArgumentError("dataset_size must be positive");
    if (models_phase1 < 2) return absl::InvalidArgumentError("models_phase1 must be >= 2");
    if (holdout_models < 1 || holdout_models >= models_phase2) {
      return absl::InvalidArgumentError(absl::StrCat(
          "need 1 <= holdout_models < models_phase2, got ", holdout_models,
          " and ", models_phase2));
    }
    if (!(confidence > 0.5 && confidence < 1)) {
      return absl::InvalidArgumentError("confidence must lie in (0.5, 1)");
    }
    if (hyper_grid.empty()) return absl::InvalidArgumentError("empty hyperparameter grid");
    for (const auto& h : hyper_grid) {
      if (!(h.learning_rate > 0) || !(h.clip_norm > 0) || h.steps < 1) {
        return absl::InvalidArgumentError("invalid hyperparameter point");
      }
    }
    return absl::OkStatus();
  }
};

// Trains one model with the given seed on D (with_canary = false) or on D'
// and returns the canary loss of the final model.
using Trainer = std::function<absl::StatusOr<double>(
    const HyperPoint& point, bool with_canary, uint64_t model_seed)>;

// Per-model seed fanned out from the master seed by a counter. Grid points
// share seeds (common random numbers), so equal points score equally.
inline uint64_t ModelSeed(uint64_t seed, int64_t phase, bool with_canary,
                          int64_t model_index) {
  return DeriveKey(seed, {0xA0D17, static_cast<uint64_t>(phase),
                          static_cast<uint64_t>(with_canary),
                          static_cast<uint64_t>(model_index)});
}

// Canary losses of `count` models of one arm, computed on `workers` threads
// and stored by model index.
inline absl::StatusOr<std::vector<double>> CollectLosses(
    const Trainer& trainer, const HyperPoint& point, bool with_canary,
    uint64_t seed, int64_t phase, int64_t count,
    int workers) {
  std::vector<double> out(static_cast<size_t>(count));
  std::vector<absl::Status> status(static_cast<size_t>(count));
  std::atomic<int64_t> next{0};
  auto work = [&] {
    for (int64_t i = next++; i < count; i = next++) {
      auto loss = trainer(point, with_canary,
                          ModelSeed(seed, phase, with_canary, i));
      if (loss.ok()) {
        out[i] = *loss;
      } else {
        status[i] = loss.status();
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& st : status) {
    if (!st.ok()) return st;
  }
  if (auto st = CheckFinite(out, "canary losses"); !st.ok()) return st;
  return out;
}

struct GaussianFit {
  double mean = 0.0;
  double variance = 0.0;
  bool degenerate = false;  // variance raised to the floor
};

// Maximum-likelihood mean and variance with a variance floor.
inline GaussianFit FitGaussian(std::span<const double> v) {
  GaussianFit f;
  for (double x : v) f.mean += x;
  f.mean /= static_cast<double>(v.size());
  for (double x : v) f.variance += (x - f.mean) * (x - f.mean);
  f.variance /= static_cast<double>(v.size());
  if (f.variance < kVarianceFloor) {
    f.variance = kVarianceFloor;
    f.degenerate = true;
  }
  return f;
}

struct Phase1Result {
  size_t best_index = 0;
  std::vector<double> tv;
  std::vector<bool> degenerate;
};

// Arg-max of the TV distance over the grid; ties keep the lower index.
inline absl::StatusOr<Phase1Result> Phase1Select(const AuditConfig& config,
                                                 const Trainer& trainer) {
  if (auto st = config.Validate(); !st.ok()) return st;
  Phase1Result r;
  for (size_t g = 0; g < config.hyper_grid.size(); ++g) {
    const auto& point = config.hyper_grid[g];
    auto out = CollectLosses(trainer, point, false, config.seed, 1,
                             config.models_phase1, config.workers);
    if (!out.ok()) return out.status();
    auto in = CollectLosses(trainer, point, true, config.seed, 1,
                            config.models_phase1, config.workers);
    if (!in.ok()) return in.status();
    const GaussianFit fo = FitGaussian(*out);
    const GaussianFit fi = FitGaussian(*in);
    auto tv = TvDistanceGaussian(fo.mean, std::sqrt(fo.variance), fi.mean,
                                 std::sqrt(fi.variance));
    if (!tv.ok()) return tv.status();
    r.tv.push_back(*tv);
    r.degenerate.push_back(fo.degenerate || fi.degenerate);
    if (*tv > r.tv[r.best_index]) r.best_index = g;
  }
  return r;
}

struct AuditResult {
  double epsilon_lower = 0.0;
  double tpr_lower = 0.0;
  double fpr_upper = 1.0;
  double attack_auc = 0.5;
  double advantage = 0.0;  // empirical TPR - FPR on the evaluation split
  double tpr = 0.0;
  double fpr = 0.0;
  double threshold = 0.0;
  double per_side_confidence = 0.0;
  int64_t eval_models = 0;  // per arm
  bool inconclusive = false;
  std::vector<double> losses_out;  // D, by model index
  std::vector<double> losses_in;   // D', by model index
};

// Threshold on holdout losses maximizing the confidence-adjusted ratio
// (TPR_lower - delta) / FPR_upper; the raw ratio TPR / FPR is unbounded
// as soon as a threshold separates the holdout arms.
inline absl::StatusOr<double> ChooseThreshold(std::span<const double> out,
                                              std::span<const double> in,
                                              double per_side_confidence,
                                              double delta) {
  std::vector<double> so(out.begin(), out.end());
  std::vector<double> si(in.begin(), in.end());
  std::sort(so.begin(), so.end());
  std::sort(si.begin(), si.end());
  std::vector<double> candidates = so;
  candidates.insert(candidates.end(), si.begin(), si.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  const auto n_in = static_cast<int64_t>(si.size());
  const auto n_out = static_cast<int64_t>(so.size());
  double best_score = -kInf;
  double best = candidates.back();
  for (size_t c = 0; c < candidates.size(); ++c) {
    // Every tau in [v_c, v_{c+1}) splits the holdout alike; take the middle.
    const double v = candidates[c];
    const double tau =
        c + 1 < candidates.size() ? 0.5 * (v + candidates[c + 1]) : v;
    const auto tp = std::upper_bound(si.begin(), si.end(), v) - si.begin();
    const auto fp = std::upper_bound(so.begin(), so.end(), v) - so.begin();
    auto lo = ClopperPearson(tp, n_in, per_side_confidence, Side::kLower);
    auto hi = ClopperPearson(fp, n_out, per_side_confidence, Side::kUpper);
    if (!lo.ok()) return lo.status();
    if (!hi.ok()) return hi.status();
    const double score = (*lo - delta) / *hi;
    if (score > best_score) {
      best_score = score;
      best = tau;
    }
  }
  return best;
}

// Phase II at one hyperparameter point. Models [0, holdout) of each arm
// choose the threshold; the rest are evaluated.
inline absl::StatusOr<AuditResult> RunAudit(const AuditConfig& config,
                                            const HyperPoint& point,
                                            const Trainer& trainer) {
  if (auto st = config.Validate(); !st.ok()) return st;
  AuditResult r;
  auto out = CollectLosses(trainer, point, false, config.seed, 2,
                           config.models_phase2, config.workers);
  if (!out.ok()) return out.status();
  auto in = CollectLosses(trainer, point, true, config.seed, 2,
                          config.models_phase2, config.workers);
  if (!in.ok()) return in.status();
  r.losses_out = *std::move(out);
  r.losses_in = *std::move(in);
  r.per_side_confidence = 1.0 - 0.5 * (1.0 - config.confidence);
  const double delta = config.nominal_budget.delta;
  const auto h = static_cast<size_t>(config.holdout_models);
  const std::span<const double> all_out(r.losses_out);
  const std::span<const double> all_in(r.losses_in);
  auto tau = ChooseThreshold(all_out.first(h), all_in.first(h),
                             r.per_side_confidence, delta);
  if (!tau.ok()) return tau.status();
  r.threshold = *tau;
  const auto eval_out = all_out.subspan(h);
  const auto eval_in = all_in.subspan(h);
  const auto n = static_cast<int64_t>(eval_in.size());
  r.eval_models = n;
  const int64_t tp = std::count_if(eval_in.begin(), eval_in.end(),
                                   [&](double l) { return l <= r.threshold; });
  const int64_t fp = std::count_if(eval_out.begin(), eval_out.end(),
                                   [&](double l) { return l <= r.threshold; });
  r.tpr = static_cast<double>(tp) / static_cast<double>(n);
  r.fpr = static_cast<double>(fp) / static_cast<double>(n);
  r.advantage = r.tpr - r.fpr;
  r.tpr_lower = *ClopperPearson(tp, n, r.per_side_confidence, Side::kLower);
  r.fpr_upper = *ClopperPearson(fp, n, r.per_side_confidence, Side::kUpper);
  const EpsilonBound bound = EpsilonLowerBound(r.tpr_lower, r.fpr_upper, delta);
  r.epsilon_lower = bound.epsilon;
  // No evidence of leakage at all is reported as inconclusive too.
  r.inconclusive = bound.inconclusive || bound.epsilon == 0.0;
  // Lower loss means "member", so the attack score is the negated loss.
  std::vector<double> scores;
  std::vector<int32_t> labels;
  for (double l : eval_in) {
    scores.push_back(-l);
    labels.push_back(1);
  }
  for (double l : eval_out) {
    scores.push_back(-l);
    labels.push_back(0);
  }
  auto auc = fairness::Auc(scores, labels);
  if (!auc.ok()) return auc.status();
  r.attack_auc = *auc;
  return r;
}

// ------------------------------------------------------- desk-scale trainer

// Logistic regression on a fixed dataset D trained by DP-SGD with Poisson
// sampling at rate expected_batch / |D|, a fixed zero initialisation and
// the privatizer's update normalised by the expected batch. The noise
// multiplier is calibrated to `budget` for each step count; without a
// budget the trainer is non-private (no clipping, no noise).
struct DeskSetup {
  data::Dataset base;  // binary multiclass dataset D
  double expected_batch = 10.0;
  std::optional<PrivacyBudget> budget;
};

struct Canary {
  Vector x;
  int32_t label = 0;
};

// Inputs live in [-1, 1] as rescaled pixels: blank is the constant -1
// vector, uniform noise is U[-1, 1]^d, mislabeled is the mean input of
// `original_class` in D.
inline absl::StatusOr<Canary> MakeCanary(const CanarySpec& spec,
                                         const data::Dataset& base) {
  const int64_t d = base.dim();
  if (spec.assigned_class < 0 || spec.assigned_class >= base.num_classes) {
    return absl::InvalidArgumentError("canary class out of range");
  }
  Canary c{Vector(static_cast<size_t>(d), -1.0), spec.assigned_class};
  if (spec.kind == CanaryKind::kUniformNoise) {
    Rng rng(DeriveKey(spec.payload_seed, {0xCA4A}));
    for (double& v : c.x) v = 2.0 * rng.Uniform() - 1.0;
  } else if (spec.kind == CanaryKind::kMislabeled) {
    if (spec.original_class < 0 || spec.original_class >= base.num_classes ||
        spec.original_class == spec.assigned_class) {
      return absl::InvalidArgumentError(
          "mislabeled canary needs two distinct valid classes");
    }
    std::fill(c.x.begin(), c.x.end(), 0.0);
    int64_t count = 0;
    for (int64_t i = 0; i < base.size(); ++i) {
      if (base.Label(i) != spec.original_class) continue;
      for (int64_t j = 0; j < d; ++j) c.x[j] += base.features(i, j);
      ++count;
    }
    if (count == 0) return absl::InvalidArgumentError("original class is absent");
    for (double& v : c.x) v /= static_cast<double>(count);
  }
  return c;
}

class DeskTrainer {
 public:
  explicit DeskTrainer(DeskSetup setup) : setup_(std::move(setup)) {
    spec_.arch = models::Architecture::kLinear;
    spec_.head = models::Head::kSoftmax;
    spec_.input_dim = setup_.base.dim();
    spec_.num_outputs = setup_.base.num_classes;
  }

  double SamplingRate() const {
    return setup_.expected_batch / static_cast<double>(setup_.base.size());
  }

  // Calibrated noise multiplier for `steps` (0 when non-private).
  absl::StatusOr<double> Sigma(int64_t steps) const {
    if (!setup_.budget) return 0.0;
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sigma_.find(steps);
    if (it != sigma_.end()) return it->second;
    auto cal = accountant::CalibrateSigma(*setup_.budget, SamplingRate(), steps);
    if (!cal.ok()) return cal.status();
    sigma_[steps] = cal->sigma;
    return cal->sigma;
  }

  absl::StatusOr<double> operator()(const HyperPoint& point, bool with_canary,
                                    uint64_t model_seed) const {
    const double q = SamplingRate();
    if (!(q > 0 && q <= 1)) {
      return absl::InvalidArgumentError("expected batch must lie in (0, |D|]");
    }
    auto sigma = Sigma(point.steps);
    if (!sigma.ok()) return sigma.status();
    auto canary = MakeCanary(point.canary, setup_.base);
    if (!canary.ok()) return canary.status();
    const Vector canary_target =
        models::SmoothedOneHot(canary->label, spec_.num_outputs, 0.0);
    const int64_t n = setup_.base.size();
    const size_t p = static_cast<size_t>(spec_.NumParams());
    models::ModelParams w = models::ZeroParams(spec_);
    std::vector<Vector> targets;
    for (int64_t i = 0; i < n; ++i) {
      targets.push_back(models::SmoothedOneHot(setup_.base.Label(i),
                                               spec_.num_outputs, 0.0));
    }
    for (int64_t t = 0; t < point.steps; ++t) {
      Rng rng(DeriveKey(model_seed, {0x5A3B, static_cast<uint64_t>(t)}));
      privatizer::PerExampleGradients grads{Matrix(0, static_cast<int64_t>(p)), {}};
      auto add = [&](std::span<const double> x, std::span<const double> y) {
        auto lg = models::LossAndGrad(spec_, w, x, y);
        if (!lg.ok()) return lg.status();
        grads.rows.data.insert(grads.rows.data.end(), lg->grad.begin(),
                               lg->grad.end());
        ++grads.rows.rows;
        return absl::OkStatus();
      };
      for (int64_t i = 0; i < n; ++i) {
        if (!rng.Bernoulli(q)) continue;
        if (auto st = add(setup_.base.features.Row(i), targets[i]); !st.ok()) return st;
      }
      // The canary's coin is drawn in both arms so the two arms share
      // every other random choice.
      const bool take_canary = rng.Bernoulli(q);
      if (with_canary && take_canary) {
        if (auto st = add(canary->x, canary_target); !st.ok()) return st;
      }
      Vector g(p, 0.0);
      if (setup_.budget) {
        auto pg = privatizer::PrivatizeWithDivisor(
            grads, {point.clip_norm},
            {*sigma, DeriveKey(model_seed, {0x4015E, static_cast<uint64_t>(t)})},
            setup_.expected_batch, p);
        if (!pg.ok()) return pg.status();
        g = *std::move(pg);
      } else {
        for (int64_t r = 0; r < grads.rows.rows; ++r) {
          const auto row = grads.rows.Row(r);
          for (size_t j = 0; j < p; ++j) g[j] += row[j] / setup_.expected_batch;
        }
      }
      for (size_t j = 0; j < p; ++j) w.flat[j] -= point.learning_rate * g[j];
    }
    return models::Loss(spec_, w, canary->x, canary_target);
  }

  Trainer AsTrainer() const {
    return [this](const HyperPoint& h, bool with_canary, uint64_t seed) {
      return (*this)(h, with_canary, seed);
    };
  }

  const models::ModelSpec& spec() const { return spec_; }

 private:
  DeskSetup setup_;
  models::ModelSpec spec_;
  mutable std::mutex mu_;
  mutable std::map<int64_t, double> sigma_;
};

// The desk-scale dataset D: |D| points of two Gaussian blobs in `dim`
// dimensions, squashed into [-1, 1] by tanh.
inline absl::StatusOr<data::Dataset> DeskDataset(int64_t size, int64_t dim,
                                                 uint64_t seed) {
  if (size < 2) return absl::InvalidArgumentError("desk dataset needs >= 2 rows");
  auto ds = data::SynthBlobs(2, (size + 1) / 2, dim, 2.0, seed);
  if (!ds.ok()) return ds.status();
  std::vector<int64_t> rows(static_cast<size_t>(size));
  for (int64_t i = 0; i < size; ++i) rows[i] = i;
  data::Dataset out = ds->Subset(rows);
  for (double& v : out.features.data) v = std::tanh(0.5 * v);
  return out;
}

// Frozen desk-scale defaults. The blank input sits on the class-0 side of
// D, so labelling it 1 makes it an outlier the model has to memorise.
inline constexpr int64_t kDeskDim = 32;
inline constexpr uint64_t kDeskDataSeed = 11;
inline constexpr double kDeskExpectedBatch = 10.0;

inline HyperPoint DeskPoint(CanaryKind kind = CanaryKind::kBlank) {
  return HyperPoint{2.0, 1.0, 50, CanarySpec{kind, 0, 1, 5}};
}

inline absl::StatusOr<DeskSetup> MakeDeskSetup(
    int64_t size, std::optional<PrivacyBudget> budget) {
  auto ds = DeskDataset(size, kDeskDim, kDeskDataSeed);
  if (!ds.ok()) return ds.status();
  return DeskSetup{*std::move(ds), kDeskExpectedBatch, budget};
}

}  // namespace dpforge::audit

#endif  // DPFORGE_AUDIT_HPP_
