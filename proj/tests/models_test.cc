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

#include "dpforge/models.hpp"

#include <cmath>
#include <vector>

#include "dpforge/dual.hpp"
#include "dpforge/random.hpp"
#include "gtest/gtest.h"
#include "oracles/flat_oracle.hpp"

namespace dpforge::models {
namespace {

using ::dpforge::testing::CentralDifference;

ModelSpec Linear(int64_t d, int64_t k, Head head = Head::kSoftmax) {
  ModelSpec s;
  s.arch = Architecture::kLinear;
  s.head = head;
  s.input_dim = d;
  s.num_outputs = k;
  return s;
}

ModelSpec Mlp(int64_t d, int64_t k, int64_t h, Head head = Head::kSoftmax) {
  ModelSpec s = Linear(d, k, head);
  s.arch = Architecture::kMlp;
  s.hidden = h;
  return s;
}

ModelSpec Conv(int64_t ch, int64_t ht, int64_t wd, int64_t k,
               Head head = Head::kSoftmax) {
  ModelSpec s = Linear(ch * ht * wd, k, head);
  s.arch = Architecture::kConv;
  s.channels = ch;
  s.height = ht;
  s.width = wd;
  s.filters = 3;
  return s;
}

Vector RandomTarget(const ModelSpec& spec, Rng& rng) {
  Vector t(static_cast<size_t>(spec.num_outputs));
  double total = 0.0;
  for (double& v : t) {
    v = rng.Uniform();
    total += v;
  }
  if (spec.head == Head::kSoftmax) {
    for (double& v : t) v /= total;
  }
  return t;
}

void ExpectGradMatchesDifferences(const ModelSpec& spec, uint64_t seed) {
  Rng rng(seed);
  ModelParams p = InitParams(spec, seed);
  for (double& v : p.flat) v += 0.3 * rng.Normal();
  const Vector x = rng.NormalVector(static_cast<size_t>(spec.input_dim));
  const Vector t = RandomTarget(spec, rng);
  auto lg = LossAndGrad(spec, p, x, t);
  ASSERT_TRUE(lg.ok()) << lg.status();
  const Vector fd = CentralDifference(
      [&](const std::vector<double>& w) {
        return *Loss(spec, {w, p.shapes}, x, t);
      },
      p.flat);
  for (size_t j = 0; j < fd.size(); ++j) {
    EXPECT_NEAR(lg->grad[j], fd[j],
                1e-4 * std::max(std::abs(fd[j]), std::abs(lg->grad[j])) + 1e-8)
        << "coordinate " << j;
  }
}

TEST(ModelSpecTest, ShapesAndCounts) {
  EXPECT_EQ(Linear(3, 2).NumParams(), 8);
  EXPECT_EQ(Mlp(3, 2, 4).NumParams(), 3 * 4 + 4 + 4 * 2 + 2);
  const ModelSpec c = Conv(2, 5, 4, 3);
  EXPECT_EQ(c.NumParams(), 3 * 2 * 9 + 3 + 3 * (3 * 3 * 2) + 3);
  EXPECT_TRUE(c.Validate().ok());
  ModelSpec bad = c;
  bad.input_dim = 7;
  EXPECT_FALSE(bad.Validate().ok());
  EXPECT_FALSE(Linear(3, 1).Validate().ok());
  EXPECT_TRUE(Linear(3, 1, Head::kSigmoid).Validate().ok());
}

TEST(ModelsTest, ZeroLinearModelIsUniform) {
  const ModelSpec spec = Linear(3, 2);
  const ModelParams p = ZeroParams(spec);
  const Vector x{1.0, -2.0, 0.5};
  const Vector y{1.0, 0.0};
  auto lg = LossAndGrad(spec, p, x, y);
  ASSERT_TRUE(lg.ok());
  EXPECT_NEAR(lg->loss, std::log(2.0), 1e-15);
  // (p - y) outer x, then (p - y) for the bias.
  const Vector py{-0.5, 0.5};
  for (int k = 0; k < 2; ++k) {
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(lg->grad[k * 3 + j], py[k] * x[j], 1e-15);
    EXPECT_NEAR(lg->grad[6 + k], py[k], 1e-15);
  }
}

TEST(ModelsTest, SmoothedTargets) {
  const Vector t = SmoothedOneHot(0, 2, 0.1);
  EXPECT_NEAR(t[0], 0.95, 1e-15);
  EXPECT_NEAR(t[1], 0.05, 1e-15);
  const std::vector<int32_t> codes{kPositive, kNegative, kUncertain, kUncertain};
  const std::vector<int32_t> map{kNegative, kNegative, kPositive, kNegative};
  const Vector m = MultilabelTarget(codes, map, 0.1, 0.2);
  EXPECT_NEAR(m[0], 0.95, 1e-15);
  EXPECT_NEAR(m[1], 0.05, 1e-15);
  EXPECT_NEAR(m[2], 0.9, 1e-15);
  EXPECT_NEAR(m[3], 0.1, 1e-15);
}

TEST(ModelsTest, GradientsMatchFiniteDifferencesAcrossZoo) {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    ExpectGradMatchesDifferences(Linear(4, 3), seed);
    ExpectGradMatchesDifferences(Linear(4, 3, Head::kSigmoid), seed);
    ExpectGradMatchesDifferences(Mlp(3, 2, 5), seed);
    ExpectGradMatchesDifferences(Mlp(3, 4, 3, Head::kSigmoid), seed);
    ExpectGradMatchesDifferences(Conv(1, 4, 5, 2), seed);
    ExpectGradMatchesDifferences(Conv(2, 3, 4, 3, Head::kSigmoid), seed);
  }
}

TEST(ModelsTest, LossMinimizedAtSmoothedTarget) {
  // With x = 0 the logits are the biases, a free distribution over classes.
  const ModelSpec spec = Linear(2, 3);
  const Vector target = SmoothedOneHot(1, 3, 0.3);
  ModelParams p = ZeroParams(spec);
  for (int k = 0; k < 3; ++k) p.flat[6 + k] = std::log(target[k]);
  const Vector x{0.0, 0.0};
  auto lg = LossAndGrad(spec, p, x, target);
  ASSERT_TRUE(lg.ok());
  for (double g : lg->grad) EXPECT_NEAR(g, 0.0, 1e-15);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    ModelParams q = p;
    for (int k = 0; k < 3; ++k) q.flat[6 + k] += 0.5 * rng.Normal();
    EXPECT_GE(*Loss(spec, q, x, target), lg->loss - 1e-15);
  }
  const ModelSpec ml = Linear(2, 2, Head::kSigmoid);
  const Vector mt = MultilabelTarget(std::vector<int32_t>{kUncertain, kPositive},
                                     std::vector<int32_t>{kPositive, kNegative},
                                     0.1, 0.2);
  ModelParams r = ZeroParams(ml);
  for (int k = 0; k < 2; ++k) r.flat[4 + k] = std::log(mt[k] / (1 - mt[k]));
  auto lr = LossAndGrad(ml, r, x, mt);
  ASSERT_TRUE(lr.ok());
  for (double g : lr->grad) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(ModelsTest, ScoresAreProbabilities) {
  Rng rng(9);
  const ModelSpec spec = Mlp(3, 4, 6);
  const ModelParams p = InitParams(spec, 4);
  auto s = Scores(spec, p, rng.NormalVector(3));
  ASSERT_TRUE(s.ok());
  double total = 0.0;
  for (double v : *s) {
    EXPECT_GT(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(ModelsTest, ExtremeLogitsStayFinite) {
  const ModelSpec spec = Linear(1, 2, Head::kSigmoid);
  ModelParams p = ZeroParams(spec);
  p.flat = {800.0, -800.0, 0.0, 0.0};
  auto lg = LossAndGrad(spec, p, Vector{1.0}, Vector{0.0, 1.0});
  ASSERT_TRUE(lg.ok());
  EXPECT_NEAR(lg->loss, 1600.0, 1e-9);
  for (double g : lg->grad) EXPECT_TRUE(std::isfinite(g));
  const ModelSpec soft = Linear(1, 2);
  auto ls = LossAndGrad(soft, p, Vector{1.0}, Vector{0.0, 1.0});
  ASSERT_TRUE(ls.ok());
  EXPECT_NEAR(ls->loss, 1600.0, 1e-9);
}

TEST(ModelsTest, RejectsDimensionMismatch) {
  const ModelSpec spec = Linear(3, 2);
  const ModelParams p = ZeroParams(spec);
  EXPECT_FALSE(LossAndGrad(spec, p, Vector{1.0, 2.0}, Vector{1.0, 0.0}).ok());
  EXPECT_FALSE(LossAndGrad(spec, p, Vector{1, 2, 3}, Vector{1.0}).ok());
  ModelParams short_p = p;
  short_p.flat.pop_back();
  EXPECT_FALSE(Scores(spec, short_p, Vector{1, 2, 3}).ok());
}

TEST(ModelsTest, InitIsDeterministicPerSeed) {
  const ModelSpec spec = Conv(1, 4, 4, 2);
  EXPECT_EQ(InitParams(spec, 5), InitParams(spec, 5));
  EXPECT_NE(InitParams(spec, 5), InitParams(spec, 6));
}

TEST(DualTest, DerivativeOfCompositeMatchesDifferences) {
  auto f = [](auto x) {
    using std::exp;
    using std::log1p;
    using std::tanh;
    return tanh(x * x) / (1.0 + exp(-x)) + log1p(x * x);
  };
  for (double x0 : {-1.5, -0.2, 0.0, 0.7, 2.3}) {
    const Dual r = f(Dual(x0, 1.0));
    const double h = 1e-6;
    EXPECT_NEAR(r.v, f(x0), 1e-15);
    EXPECT_NEAR(r.d, (f(x0 + h) - f(x0 - h)) / (2 * h), 1e-7);
  }
}

TEST(DualTest, ModelInputTangentMatchesDifferences) {
  // Directional derivative of the loss along a random input direction.
  const ModelSpec spec = Mlp(3, 2, 4);
  const ModelParams p = InitParams(spec, 12);
  Rng rng(12);
  const Vector x = rng.NormalVector(3);
  const Vector dir = rng.NormalVector(3);
  const Vector t{0.3, 0.7};
  std::vector<Dual> w(p.flat.begin(), p.flat.end());
  std::vector<Dual> xd(3);
  for (int j = 0; j < 3; ++j) xd[j] = Dual(x[j], dir[j]);
  const Dual loss = internal::LossAndGradient<Dual>(
      spec, std::span<const Dual>(w), std::span<const Dual>(xd), t, nullptr);
  const double h = 1e-6;
  Vector xp = x;
  Vector xm = x;
  for (int j = 0; j < 3; ++j) {
    xp[j] += h * dir[j];
    xm[j] -= h * dir[j];
  }
  const double fd = (*Loss(spec, p, xp, t) - *Loss(spec, p, xm, t)) / (2 * h);
  EXPECT_NEAR(loss.d, fd, 1e-7);
}

}  // namespace
}  // namespace dpforge::models
