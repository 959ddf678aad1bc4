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

// Desk-scale end-to-end studies on synthetic data.
//
// The subgroup study trains a private and a non-private model per seed on a
// population with imbalanced demographic groups, tabulates AUC disparity
// per subgroup and regresses the private-minus-public disparity gap on
// group size. The imbalance study compares per-class recall when one class
// is under-represented, with and without DP noise.

#ifndef DPFORGE_STUDY_HPP_
#define DPFORGE_STUDY_HPP_

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/data.hpp"
#include "dpforge/fairness.hpp"
#include "dpforge/models.hpp"
#include "dpforge/numeric.hpp"
#include "dpforge/random.hpp"
#include "dpforge/train.hpp"

namespace dpforge::study {

// ------------------------------------------------------------ subgroups

// Three classes in `dim` dimensions. Each row carries a sex (70/30) and an
// age band (60/30/10); the class geometry is rotated per age band and
// shifted for the smaller sex, so minority groups are served worse by a
// model fit mostly to the majority.
inline absl::StatusOr<data::Dataset> SubgroupPopulation(int64_t n, int64_t dim,
                                                        uint64_t seed) {
  if (n < 30 || dim < 2) {
    return absl::InvalidArgumentError("population needs n >= 30 and dim >= 2");
  }
  data::Dataset ds;
  ds.task = data::Task::kMulticlass;
  ds.num_classes = 3;
  ds.label_names = {"label"};
  for (int64_t j = 0; j < dim; ++j) ds.feature_names.push_back(absl::StrCat("x", j));
  ds.attributes = {{"sex", {"F", "M"}}, {"age", {"18-40", "40-65", "65+"}}};
  ds.features = Matrix(n, dim);
  const double angle[3] = {0.0, 0.35, 0.9};
  Rng rng(DeriveKey(seed, {0x5B6}));
  for (int64_t i = 0; i < n; ++i) {
    const int32_t sex = rng.Uniform() < 0.7 ? 0 : 1;
    const double u = rng.Uniform();
    const int32_t age = u < 0.6 ? 0 : (u < 0.9 ? 1 : 2);
    const auto c = static_cast<int32_t>(rng.UniformInt(3));
    const double base = 2.0 * std::numbers::pi * c / 3.0 + angle[age];
    ds.features(i, 0) = 1.6 * std::cos(base) + (sex == 1 ? 0.6 : 0.0);
    ds.features(i, 1) = 1.6 * std::sin(base);
    for (int64_t j = 0; j < dim; ++j) ds.features(i, j) += rng.Normal();
    ds.labels.push_back(c);
    ds.attribute_codes.push_back(sex);
    ds.attribute_codes.push_back(age);
    ds.split.push_back(data::Split::kTrain);
  }
  return ds;
}

struct SubgroupStudyOptions {
  int64_t seeds = 20;
  int64_t population = 6000;
  int64_t dim = 6;
  double test_fraction = 0.25;
  double epsilon = 8.0;
  double delta = 0.0;  // 0 means 1 / |train|
  int64_t batch = 256;
  int64_t steps = 300;
  double learning_rate = 2.0;
  double clip_norm = 1.0;
  int64_t min_group_size = 10;
  int64_t bootstrap = 1000;
  uint64_t data_seed = 7;
};

// Per-subgroup mean and standard deviation of disparity over seeds.
struct SubgroupSummary {
  std::string subgroup_key;
  double epsilon_tag = kInf;
  int64_t seeds = 0;
  double mean_group_size = 0.0;
  double mean_disparity = 0.0;
  double std_disparity = 0.0;
  double mean_group_auc = 0.0;
};

// Scatter point for the "disparity gap vs group size" panel.
struct GapPoint {
  std::string subgroup_key;
  double group_size = 0.0;
  double public_disparity = 0.0;
  double private_disparity = 0.0;
  double gap = 0.0;  // private - public
};

struct SubgroupStudyResult {
  std::vector<fairness::DisparityRecord> records;
  std::vector<SubgroupSummary> summaries;
  std::vector<GapPoint> gaps;
  fairness::RegressionFit gap_fit;
  std::vector<double> private_accuracy;  // per seed
  std::vector<double> public_accuracy;
  double sigma = 0.0;
};

// Groups records by (epsilon tag, subgroup) in a stable order; undefined
// records are skipped. Sample standard deviation; 0 for a single seed.
inline std::vector<SubgroupSummary> SummarizeDisparities(
    std::span<const fairness::DisparityRecord> records) {
  std::map<std::pair<double, std::string>, std::vector<const fairness::DisparityRecord*>> by;
  for (const auto& r : records) {
    if (!r.undefined) by[{r.epsilon_tag, r.subgroup_key}].push_back(&r);
  }
  std::vector<SubgroupSummary> out;
  for (const auto& [key, rs] : by) {
    SubgroupSummary s;
    s.epsilon_tag = key.first;
    s.subgroup_key = key.second;
    s.seeds = static_cast<int64_t>(rs.size());
    for (const auto* r : rs) {
      s.mean_group_size += static_cast<double>(r->group_size);
      s.mean_disparity += r->disparity;
      s.mean_group_auc += r->group_auc;
    }
    const double n = static_cast<double>(rs.size());
    s.mean_group_size /= n;
    s.mean_disparity /= n;
    s.mean_group_auc /= n;
    if (rs.size() > 1) {
      double ss = 0.0;
      for (const auto* r : rs) ss += std::pow(r->disparity - s.mean_disparity, 2);
      s.std_disparity = std::sqrt(ss / (n - 1.0));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Pairs the private and non-private summaries of each subgroup.
inline std::vector<GapPoint> DisparityGaps(std::span<const SubgroupSummary> summaries,
                                           double epsilon) {
  std::map<std::string, GapPoint> m;
  std::map<std::string, int> seen;
  for (const auto& s : summaries) {
    auto& p = m[s.subgroup_key];
    p.subgroup_key = s.subgroup_key;
    if (std::isinf(s.epsilon_tag)) {
      p.public_disparity = s.mean_disparity;
      p.group_size = s.mean_group_size;
      seen[s.subgroup_key] |= 1;
    } else if (s.epsilon_tag == epsilon) {
      p.private_disparity = s.mean_disparity;
      seen[s.subgroup_key] |= 2;
    }
  }
  std::vector<GapPoint> out;
  for (auto& [key, p] : m) {
    if (seen[key] != 3) continue;
    p.gap = p.private_disparity - p.public_disparity;
    out.push_back(p);
  }
  return out;
}

inline absl::StatusOr<SubgroupStudyResult> RunSubgroupStudy(
    const SubgroupStudyOptions& o) {
  if (o.seeds < 1) return absl::InvalidArgumentError("seeds must be >= 1");
  auto pop = SubgroupPopulation(o.population, o.dim, o.data_seed);
  if (!pop.ok()) return pop.status();
  auto split = data::AssignSplits(*std::move(pop), 0.0, o.test_fraction, o.data_seed);
  if (!split.ok()) return split.status();
  const data::Dataset& ds = *split;
  const auto test_rows = ds.IndicesOf(data::Split::kTest);
  const data::Dataset test = ds.Subset(test_rows);
  const auto train_n = static_cast<double>(ds.IndicesOf(data::Split::kTrain).size());
  const std::vector<int32_t> onehot = fairness::OneHotLabels(test.labels, 3);

  models::ModelSpec spec;
  spec.arch = models::Architecture::kMlp;
  spec.head = models::Head::kSoftmax;
  spec.input_dim = o.dim;
  spec.num_outputs = 3;
  spec.hidden = 16;

  SubgroupStudyResult result;
  const double delta = o.delta > 0 ? o.delta : 1.0 / train_n;
  auto cal = accountant::CalibrateSigma({o.epsilon, delta},
                                        static_cast<double>(o.batch) / train_n, o.steps);
  if (!cal.ok()) return cal.status();
  result.sigma = cal->sigma;

  for (int64_t seed = 0; seed < o.seeds; ++seed) {
    for (bool priv : {false, true}) {
      train::TrainConfig c;
      c.learning_rate = priv ? o.learning_rate : 0.5;
      c.batch = o.batch;
      c.steps = o.steps;
      c.clip_norm = o.clip_norm;
      c.private_sgd = priv;
      c.sigma = priv ? result.sigma : 0.0;
      c.report_delta = delta;
      c.ema_rate = 0.99;
      c.num_checkpoints = 1;
      c.seed = static_cast<uint64_t>(seed);
      auto init = models::InitParams(spec, DeriveKey(static_cast<uint64_t>(seed), {0x1A17}));
      auto run = train::Train(ds, spec, c, std::nullopt, init);
      if (!run.ok()) return run.status();
      auto scores = train::AggregatePredictions(spec, run->checkpoints, test.features);
      if (!scores.ok()) return scores.status();
      (priv ? result.private_accuracy : result.public_accuracy)
          .push_back(train::Accuracy(*scores, test.labels));
      fairness::DisparityOptions d;
      d.intersections = {{0, 1}};
      d.min_group_size = o.min_group_size;
      d.seed = seed;
      d.epsilon_tag = priv ? o.epsilon : kInf;
      auto table = fairness::DisparityTable(*scores, onehot, test, d);
      if (!table.ok()) return table.status();
      result.records.insert(result.records.end(), table->begin(), table->end());
    }
  }
  result.summaries = SummarizeDisparities(result.records);
  result.gaps = DisparityGaps(result.summaries, o.epsilon);
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& g : result.gaps) {
    x.push_back(g.group_size);
    y.push_back(g.gap);
  }
  auto fit = fairness::OlsBootstrap(x, y, o.bootstrap, 0.95, o.data_seed);
  if (!fit.ok()) return fit.status();
  result.gap_fit = *fit;
  return result;
}

// ------------------------------------------------------------ imbalance

struct ImbalanceOptions {
  int64_t classes = 4;
  int64_t per_class = 600;
  int64_t dim = 6;
  double separation = 2.5;
  int32_t minority_class = 0;
  double minority_fraction = 0.1;
  double epsilon = 8.0;
  int64_t batch = 128;
  int64_t steps = 400;
  double learning_rate = 2.0;
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  uint64_t data_seed = 5;
};

struct ImbalanceArm {
  std::string name;
  double minority_recall = 0.0;    // mean over seeds
  double worst_class_accuracy = 0.0;
  double overall_accuracy = 0.0;
};

struct ImbalanceResult {
  ImbalanceArm balanced_private;
  ImbalanceArm balanced_public;
  ImbalanceArm imbalanced_private;
  ImbalanceArm imbalanced_public;
};

inline absl::StatusOr<ImbalanceArm> RunImbalanceArm(const ImbalanceOptions& o,
                                                    const data::Dataset& train_set,
                                                    const data::Dataset& test_set,
                                                    bool priv, std::string name) {
  models::ModelSpec spec;
  spec.arch = models::Architecture::kLinear;
  spec.head = models::Head::kSoftmax;
  spec.input_dim = o.dim;
  spec.num_outputs = o.classes;
  ImbalanceArm arm;
  arm.name = std::move(name);
  for (uint64_t seed : o.seeds) {
    train::TrainConfig c;
    c.learning_rate = priv ? o.learning_rate : 0.5;
    c.batch = o.batch;
    c.steps = o.steps;
    c.private_sgd = priv;
    if (priv) {
      c.budget = accountant::PrivacyBudget{
          o.epsilon, 1.0 / static_cast<double>(train_set.size())};
    }
    c.ema_rate = 0.99;
    c.num_checkpoints = 1;
    c.seed = seed;
    auto run = train::Train(train_set, spec, c);
    if (!run.ok()) return run.status();
    auto scores = train::AggregatePredictions(spec, run->checkpoints, test_set.features);
    if (!scores.ok()) return scores.status();
    auto report = fairness::PerClassReport(*scores, test_set.labels);
    if (!report.ok()) return report.status();
    double worst = 1.0;
    for (const auto& m : report->classes) {
      if (m.defined) worst = std::min(worst, m.accuracy);
    }
    arm.minority_recall += report->classes[o.minority_class].recall;
    arm.worst_class_accuracy += worst;
    arm.overall_accuracy += report->overall_accuracy;
  }
  const double n = static_cast<double>(o.seeds.size());
  arm.minority_recall /= n;
  arm.worst_class_accuracy /= n;
  arm.overall_accuracy /= n;
  return arm;
}

// Balanced and minority-subsampled training sets, evaluated on one
// balanced test set drawn independently.
inline absl::StatusOr<ImbalanceResult> RunImbalanceStudy(const ImbalanceOptions& o) {
  if (o.seeds.empty()) return absl::InvalidArgumentError("no seeds");
  auto balanced = data::SynthBlobs(o.classes, o.per_class, o.dim, o.separation, o.data_seed);
  if (!balanced.ok()) return balanced.status();
  auto test = data::SynthBlobs(o.classes, o.per_class / 2, o.dim, o.separation,
                               DeriveKey(o.data_seed, {0x7E57}));
  if (!test.ok()) return test.status();
  auto skewed = data::SubsampleClass(*balanced, o.minority_class, o.minority_fraction,
                                     o.data_seed);
  if (!skewed.ok()) return skewed.status();
  ImbalanceResult r;
  const std::pair<ImbalanceArm*, std::tuple<const data::Dataset*, bool, const char*>> arms[] = {
      {&r.balanced_private, {&*balanced, true, "balanced_private"}},
      {&r.balanced_public, {&*balanced, false, "balanced_nonprivate"}},
      {&r.imbalanced_private, {&*skewed, true, "imbalanced_private"}},
      {&r.imbalanced_public, {&*skewed, false, "imbalanced_nonprivate"}}};
  for (const auto& [dst, spec] : arms) {
    auto a = RunImbalanceArm(o, *std::get<0>(spec), *test, std::get<1>(spec),
                             std::get<2>(spec));
    if (!a.ok()) return a.status();
    *dst = *std::move(a);
  }
  return r;
}

}  // namespace dpforge::study

#endif  // DPFORGE_STUDY_HPP_
