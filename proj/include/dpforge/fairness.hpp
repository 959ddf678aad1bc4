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

// Subgroup performance analytics: Mann-Whitney AUC, macro AUC, subgroup AUC
// disparities (population AUC minus subgroup AUC), OLS with case-resampling
// bootstrap intervals, and per-class precision / recall / F1.

#ifndef DPFORGE_FAIRNESS_HPP_
#define DPFORGE_FAIRNESS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/data.hpp"
#include "dpforge/numeric.hpp"
#include "dpforge/random.hpp"

namespace dpforge::fairness {

// P(score_pos > score_neg) + P(tie) / 2 from mid-ranks, O(n log n). The
// numerator is a sum of half-integers, so the result is exactly the
// pairwise count divided by n_pos * n_neg.
inline absl::StatusOr<double> Auc(std::span<const double> scores,
                                  std::span<const int32_t> labels) {
  if (scores.size() != labels.size()) {
    return absl::InvalidArgumentError("scores and labels differ in length");
  }
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j+1 share the mid-rank (i + j + 2) / 2.
    const double mid = 0.5 * static_cast<double>(i + j + 2);
    for (size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += mid;
        n_pos += 1.0;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    return absl::FailedPreconditionError(
        "undefined AUC: labels contain a single class");
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

struct MacroAucResult {
  double value = 0.0;
  std::vector<double> per_class;  // NaN for skipped classes
  std::vector<int64_t> skipped;
};

// Mean of per-column AUCs over columns where both labels occur. `labels`
// is a binary indicator matrix with the same shape as `scores`.
inline absl::StatusOr<MacroAucResult> MacroAuc(const Matrix& scores,
                                               std::span<const int32_t> labels,
                                               std::span<const int64_t> rows = {}) {
  const int64_t k = scores.cols;
  if (static_cast<int64_t>(labels.size()) != scores.rows * k) {
    return absl::InvalidArgumentError("label matrix shape mismatch");
  }
  std::vector<int64_t> all;
  if (rows.empty()) {
    all.resize(static_cast<size_t>(scores.rows));
    std::iota(all.begin(), all.end(), int64_t{0});
    rows = all;
  }
  MacroAucResult out;
  double total = 0.0;
  int64_t valid = 0;
  std::vector<double> s(rows.size());
  std::vector<int32_t> y(rows.size());
  for (int64_t c = 0; c < k; ++c) {
    for (size_t r = 0; r < rows.size(); ++r) {
      s[r] = scores(rows[r], c);
      y[r] = labels[static_cast<size_t>(rows[r] * k + c)];
    }
    auto a = Auc(s, y);
    if (!a.ok()) {
      out.per_class.push_back(std::nan(""));
      out.skipped.push_back(c);
      continue;
    }
    out.per_class.push_back(*a);
    total += *a;
    ++valid;
  }
  if (valid == 0) {
    return absl::FailedPreconditionError(
        "undefined AUC: no class has both labels present");
  }
  out.value = total / static_cast<double>(valid);
  return out;
}

// One-vs-rest indicator matrix for class ids.
inline std::vector<int32_t> OneHotLabels(std::span<const int32_t> classes,
                                         int64_t num_classes) {
  std::vector<int32_t> out(classes.size() * static_cast<size_t>(num_classes), 0);
  for (size_t i = 0; i < classes.size(); ++i) {
    out[i * static_cast<size_t>(num_classes) + static_cast<size_t>(classes[i])] = 1;
  }
  return out;
}

struct DisparityRecord {
  std::string subgroup_key;
  int64_t group_size = 0;
  double group_auc = 0.0;
  double population_auc = 0.0;
  double disparity = 0.0;  // population_auc - group_auc
  int64_t seed = 0;
  double epsilon_tag = kInf;  // +inf marks a non-private model
  bool small = false;      // group_size below the floor
  bool undefined = false;  // no class with both labels inside the group
};

struct DisparityOptions {
  // Attribute index sets to cross, in addition to every single attribute.
  std::vector<std::vector<size_t>> intersections;
  int64_t min_group_size = 10;
  int64_t seed = 0;
  double epsilon_tag = kInf;
};

// One record per non-empty subgroup: every category of every attribute,
// then every category combination of each requested intersection.
inline absl::StatusOr<std::vector<DisparityRecord>> DisparityTable(
    const Matrix& scores, std::span<const int32_t> labels,
    const data::Dataset& attributes, const DisparityOptions& options = {}) {
  if (attributes.size() != scores.rows) {
    return absl::InvalidArgumentError(absl::StrCat(
        "attribute table has ", attributes.size(), " rows, scores have ",
        scores.rows));
  }
  auto population = MacroAuc(scores, labels);
  if (!population.ok()) return population.status();
  std::vector<std::vector<size_t>> sets;
  for (size_t a = 0; a < attributes.attributes.size(); ++a) sets.push_back({a});
  for (const auto& s : options.intersections) {
    for (size_t a : s) {
      if (a >= attributes.attributes.size()) {
        return absl::InvalidArgumentError(
            absl::StrCat("intersection names unknown attribute ", a));
      }
    }
    sets.push_back(s);
  }
  std::vector<DisparityRecord> out;
  for (const auto& set : sets) {
    std::map<std::string, std::vector<int64_t>> groups;
    for (int64_t i = 0; i < scores.rows; ++i) {
      groups[data::SubgroupKey(attributes, i, set)].push_back(i);
    }
    for (const auto& [key, rows] : groups) {
      DisparityRecord r;
      r.subgroup_key = key;
      r.group_size = static_cast<int64_t>(rows.size());
      r.population_auc = population->value;
      r.seed = options.seed;
      r.epsilon_tag = options.epsilon_tag;
      r.small = r.group_size < options.min_group_size;
      auto g = MacroAuc(scores, labels, rows);
      if (g.ok()) {
        r.group_auc = g->value;
        r.disparity = r.population_auc - r.group_auc;
      } else {
        r.undefined = true;
        r.group_auc = std::nan("");
        r.disparity = std::nan("");
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

struct RegressionFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int64_t resamples = 0;
};

// Least squares y = intercept + slope x via centred normal equations.
inline absl::StatusOr<std::pair<double, double>> OlsFit(
    std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    return absl::InvalidArgumentError("OLS needs >= 2 paired points");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0)) {
    return absl::FailedPreconditionError("degenerate fit: zero variance in x");
  }
  const double slope = sxy / sxx;
  return std::pair{slope, my - slope * mx};
}

// Percentile bootstrap interval for the slope over case resamples;
// resamples with zero x-variance are redrawn.
inline absl::StatusOr<RegressionFit> OlsBootstrap(std::span<const double> x,
                                                  std::span<const double> y,
                                                  int64_t resamples, double ci,
                                                  uint64_t seed) {
  if (x.size() < 3) return absl::InvalidArgumentError("OLS needs >= 3 points");
  if (resamples < 100) return absl::InvalidArgumentError("resamples must be >= 100");
  if (!(ci > 0 && ci < 1)) return absl::InvalidArgumentError("ci must lie in (0, 1)");
  auto fit = OlsFit(x, y);
  if (!fit.ok()) return fit.status();
  RegressionFit out{fit->first, fit->second, 0.0, 0.0, resamples};
  Rng rng(DeriveKey(seed, {0xB0075}));
  std::vector<double> slopes;
  std::vector<double> bx(x.size());
  std::vector<double> by(x.size());
  int64_t attempts = 0;
  while (static_cast<int64_t>(slopes.size()) < resamples) {
    if (++attempts > 100 * resamples) {
      return absl::FailedPreconditionError("bootstrap resamples are degenerate");
    }
    for (size_t i = 0; i < x.size(); ++i) {
      const size_t j = rng.UniformInt(x.size());
      bx[i] = x[j];
      by[i] = y[j];
    }
    auto f = OlsFit(bx, by);
    if (f.ok()) slopes.push_back(f->first);
  }
  std::sort(slopes.begin(), slopes.end());
  // Linear interpolation between order statistics.
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(slopes.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, slopes.size() - 1);
    return slopes[lo] + (pos - static_cast<double>(lo)) * (slopes[hi] - slopes[lo]);
  };
  out.ci_low = quantile(0.5 * (1.0 - ci));
  out.ci_high = quantile(0.5 * (1.0 + ci));
  return out;
}

struct ClassMetrics {
  int64_t class_id = 0;
  int64_t support = 0;    // examples of the class
  int64_t predicted = 0;  // examples predicted as the class
  // Class-conditional accuracy TP / support (equal to recall); NaN when the
  // class is absent from the labels.
  double accuracy = 0.0;
  double precision = 0.0;  // NaN when never predicted
  double recall = 0.0;
  double f1 = 0.0;
  bool defined = true;
};

struct PerClassReportResult {
  std::vector<ClassMetrics> classes;
  int64_t worst_class = -1;  // lowest defined accuracy
  double overall_accuracy = 0.0;
};

inline absl::StatusOr<PerClassReportResult> PerClassReport(
    const Matrix& scores, std::span<const int32_t> labels) {
  if (static_cast<int64_t>(labels.size()) != scores.rows) {
    return absl::InvalidArgumentError("labels do not match score rows");
  }
  const int64_t k = scores.cols;
  std::vector<int64_t> tp(k, 0), support(k, 0), predicted(k, 0);
  int64_t correct = 0;
  for (int64_t i = 0; i < scores.rows; ++i) {
    const auto row = scores.Row(i);
    const int64_t pred = std::max_element(row.begin(), row.end()) - row.begin();
    const int32_t y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k) {
      return absl::InvalidArgumentError(absl::StrCat("label ", y, " out of range"));
    }
    ++support[y];
    ++predicted[pred];
    if (pred == y) {
      ++tp[y];
      ++correct;
    }
  }
  PerClassReportResult out;
  out.overall_accuracy =
      scores.rows ? static_cast<double>(correct) / static_cast<double>(scores.rows)
                  : 0.0;
  double worst = kInf;
  for (int64_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.class_id = c;
    m.support = support[c];
    m.predicted = predicted[c];
    const double nan = std::nan("");
    m.defined = support[c] > 0;
    m.recall = m.defined ? static_cast<double>(tp[c]) / support[c] : nan;
    m.accuracy = m.recall;
    m.precision = predicted[c] > 0 ? static_cast<double>(tp[c]) / predicted[c] : nan;
    if (!m.defined) {
      m.f1 = nan;
    } else if (tp[c] == 0) {
      m.f1 = 0.0;
    } else {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    if (m.defined && m.accuracy < worst) {
      worst = m.accuracy;
      out.worst_class = c;
    }
    out.classes.push_back(m);
  }
  return out;
}

}  // namespace dpforge::fairness

#endif  // DPFORGE_FAIRNESS_HPP_
