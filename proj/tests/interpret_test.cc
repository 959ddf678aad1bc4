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

#include "dpforge/interpret.hpp"

#include <cmath>
#include <vector>

#include "dpforge/random.hpp"
#include "gtest/gtest.h"

namespace dpforge::interpret {
namespace {

// Monte Carlo estimate of the K-choice success of the mu-Gaussian test: the
// member's statistic is N(mu, 1), the others N(0, 1); the attacker picks
// the largest.
double MonteCarloKChoice(double mu, int64_t k, int64_t trials, uint64_t seed) {
  Rng rng(seed);
  int64_t hits = 0;
  for (int64_t t = 0; t < trials; ++t) {
    const double member = mu + rng.Normal();
    bool best = true;
    for (int64_t j = 1; j < k && best; ++j) best = rng.Normal() < member;
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

TEST(MiaRegionTest, BlindGuessingLine) {
  auto r = MiaRegion({0.0, 0.0}, 11);
  ASSERT_TRUE(r.ok());
  for (size_t i = 0; i < r->alpha_grid.size(); ++i) {
    EXPECT_NEAR(r->beta_lower[i], 1.0 - r->alpha_grid[i], 1e-15);
  }
}

TEST(MiaRegionTest, HandValueAndVacuousDelta) {
  EXPECT_NEAR(BetaLower({1.0, 1e-5}, 0.1),
              std::max(1 - 1e-5 - std::exp(1.0) * 0.1,
                       std::exp(-1.0) * (0.9 - 1e-5)),
              1e-15);
  EXPECT_NEAR(BetaLower({1.0, 1e-5}, 0.1), 0.72816181715, 1e-10);
  auto r = MiaRegion({3.0, 1.0}, 50);
  ASSERT_TRUE(r.ok());
  for (double b : r->beta_lower) EXPECT_EQ(b, 0.0);
}

TEST(MiaRegionTest, MonotoneBoundedAndSymmetric) {
  for (double eps : {0.1, 1.0, 3.0}) {
    for (double delta : {0.0, 1e-3, 0.2}) {
      const PrivacyBudget b{eps, delta};
      auto r = MiaRegion(b, 201);
      ASSERT_TRUE(r.ok());
      for (size_t i = 0; i < r->beta_lower.size(); ++i) {
        EXPECT_GE(r->beta_lower[i], 0.0);
        EXPECT_LE(r->beta_lower[i], 1.0);
        if (i > 0) EXPECT_LE(r->beta_lower[i], r->beta_lower[i - 1]);
        // (alpha, beta_lower(alpha)) on the boundary maps to a feasible
        // point after swapping the two errors.
        const double a = r->alpha_grid[i];
        const double beta = r->beta_lower[i];
        EXPECT_LE(BetaLower(b, beta), a + 1e-12);
      }
    }
  }
  EXPECT_FALSE(MiaRegion({-1.0, 0.0}, 10).ok());
  EXPECT_FALSE(MiaRegion({1.0, 1.5}, 10).ok());
  EXPECT_FALSE(MiaRegion({1.0, 0.0}, 1).ok());
}

TEST(AdvantageTest, TableValues) {
  const double delta = 1.0 / 60000;
  const std::vector<std::pair<double, double>> rows{
      {1, 0.46}, {2, 0.76}, {4, 0.96}, {8, 1.00}};
  for (const auto& [eps, want] : rows) {
    auto a = AdvantageUpper({eps, delta});
    ASSERT_TRUE(a.ok());
    EXPECT_NEAR(*a, want, 0.005) << eps;
  }
  EXPECT_EQ(*AdvantageUpper({0.0, 0.0}), 0.0);
}

TEST(AdvantageTest, EqualsMaxOverRegion) {
  for (double eps : {0.5, 1.0, 2.5}) {
    const PrivacyBudget b{eps, 1e-3};
    auto r = MiaRegion(b, 100001);
    double best = 0.0;
    for (size_t i = 0; i < r->alpha_grid.size(); ++i) {
      best = std::max(best, 1.0 - r->alpha_grid[i] - r->beta_lower[i]);
    }
    EXPECT_NEAR(best, *AdvantageUpper(b), 1e-4);
  }
}

TEST(CalibrateMuTest, RoundTripsDelta) {
  for (double eps : {0.5, 1.0, 4.0, 8.0}) {
    for (double delta : {1e-8, 1e-5, 1e-2}) {
      auto mu = CalibrateMu({eps, delta});
      ASSERT_TRUE(mu.ok());
      EXPECT_NEAR(GaussianDelta(*mu, eps), delta, 1e-7);
    }
  }
  EXPECT_EQ(*CalibrateMu({0.0, 0.0}), 0.0);
  EXPECT_FALSE(CalibrateMu({5000.0, 0.6}).ok());
  EXPECT_FALSE(std::isnan(GaussianDelta(1.0, 5000.0)));
}

TEST(KChoiceTest, LimitsAndBinaryClosedForm) {
  for (int64_t k : {2, 5, 40}) {
    EXPECT_EQ(*KChoiceSuccess({0.0, 0.0}, k), 1.0 / static_cast<double>(k));
  }
  // At K = 2 the integral is P(N(mu, 1) > N(0, 1)) = Phi(mu / sqrt 2).
  for (double mu : {0.1, 0.8, 2.0, 5.0}) {
    EXPECT_NEAR(KChoiceSuccessForMu(mu, 2), NormalCdf(mu / std::sqrt(2.0)), 1e-8);
  }
  EXPECT_FALSE(KChoiceSuccess({1.0, 1e-5}, 1).ok());
}

TEST(KChoiceTest, MatchesMonteCarloOracle) {
  for (auto [mu, k] : std::vector<std::pair<double, int64_t>>{
           {0.5, 3}, {1.5, 10}, {3.0, 18}}) {
    const double mc = MonteCarloKChoice(mu, k, 200000, 17);
    EXPECT_NEAR(KChoiceSuccessForMu(mu, k), mc, 0.005) << mu << " " << k;
  }
}

TEST(KChoiceTest, MonotoneInKAndEpsilon) {
  double prev = 1.0;
  for (int64_t k = 2; k <= 64; ++k) {
    const double s = *KChoiceSuccess({4.0, 1e-5}, k);
    EXPECT_LE(s, prev + 1e-12);
    EXPECT_GE(s, 1.0 / static_cast<double>(k));
    EXPECT_LE(s, 1.0);
    prev = s;
  }
  double last = 0.0;
  for (double eps : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double s = *KChoiceSuccess({eps, 1e-5}, 10);
    EXPECT_GE(s, last);
    last = s;
  }
}

TEST(CrowdThresholdTest, NearEighteenAtEpsilonEight) {
  auto k = CrowdThreshold({8.0, 1e-5});
  ASSERT_TRUE(k.ok());
  EXPECT_GE(*k, 14);
  EXPECT_LE(*k, 22);
  EXPECT_LE(*KChoiceSuccess({8.0, 1e-5}, *k), 0.5);
  EXPECT_GT(*KChoiceSuccess({8.0, 1e-5}, *k - 1), 0.5);
}

TEST(CrowdThresholdTest, TrivialAndMonotone) {
  EXPECT_EQ(*CrowdThreshold({0.0, 0.0}), 2);
  int64_t prev = 2;
  for (double eps : {0.5, 1.0, 2.0, 4.0, 8.0, 10.0}) {
    const int64_t k = *CrowdThreshold({eps, 1e-5});
    EXPECT_GE(k, prev);
    prev = k;
  }
  EXPECT_LE(*CrowdThreshold({4.0, 1e-5}), *CrowdThreshold({8.0, 1e-5}));
}

}  // namespace
}  // namespace dpforge::interpret
