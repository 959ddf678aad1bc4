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

#include "dpforge/privatizer.hpp"

#include <cmath>
#include <vector>

#include "dpforge/numeric.hpp"
#include "dpforge/random.hpp"
#include "gtest/gtest.h"
#include "oracles/flat_oracle.hpp"

namespace dpforge::privatizer {
namespace {

using ::dpforge::testing::FlatPrivatized;

PerExampleGradients Rows(std::vector<std::vector<double>> rows) {
  PerExampleGradients g;
  g.rows = Matrix(static_cast<int64_t>(rows.size()),
                  static_cast<int64_t>(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      g.rows(static_cast<int64_t>(r), static_cast<int64_t>(c)) = rows[r][c];
    }
  }
  return g;
}

Matrix RandomMatrix(int64_t rows, int64_t cols, uint64_t seed, double scale) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (double& v : m.data) v = scale * rng.Normal();
  return m;
}

// Gradient of example `index` is a fixed nonlinear function of its input,
// so augmentation changes it.
GradientFn TestGradient(size_t dim) {
  return [dim](int64_t index, std::span<const double> x) {
    Vector g(dim);
    for (size_t j = 0; j < dim; ++j) {
      g[j] = std::sin(x[j % x.size()] * (1.0 + 0.1 * static_cast<double>(index))) *
             (2.0 + static_cast<double>(j));
    }
    return g;
  };
}

TEST(ClipTest, ScalesLongVectors) {
  const Vector v = Clip(std::vector<double>{3, 4}, 2);
  EXPECT_NEAR(v[0], 1.2, 1e-15);
  EXPECT_NEAR(v[1], 1.6, 1e-15);
}

TEST(ClipTest, IdentityBelowThreshold) {
  EXPECT_EQ(Clip(std::vector<double>{0.3, 0.4}, 1), (Vector{0.3, 0.4}));
  EXPECT_EQ(Clip(std::vector<double>{0, 0, 0}, 0.5), (Vector{0, 0, 0}));
}

TEST(ClipTest, NormIsMinOfNormAndBoundAndIdempotent) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Vector v = rng.NormalVector(5);
    const double scale = std::exp(3 * rng.Normal());
    for (double& x : v) x *= scale;
    const double c = std::exp(rng.Normal());
    const Vector once = Clip(v, c);
    EXPECT_NEAR(Norm2(once), std::min(Norm2(v), c), 1e-12 * std::max(1.0, c));
    const Vector twice = Clip(once, c);
    for (size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(twice[i], once[i], 1e-12 * c);
  }
}

TEST(PrivatizeFlatTest, HandValues) {
  auto a = PrivatizeFlat(Rows({{0.6, 0.8}}), {1.0}, {0.0, 1}, 1);
  ASSERT_TRUE(a.ok());
  EXPECT_NEAR((*a)[0], 0.6, 1e-15);
  EXPECT_NEAR((*a)[1], 0.8, 1e-15);
  // Clip to norm 2 gives (1.2, 1.6), then divide by C = 2.
  auto b = PrivatizeFlat(Rows({{6, 8}}), {2.0}, {0.0, 1}, 1);
  ASSERT_TRUE(b.ok());
  EXPECT_NEAR((*b)[0], 0.6, 1e-15);
  EXPECT_NEAR((*b)[1], 0.8, 1e-15);
  auto c = PrivatizeFlat(Rows({{1, 0}, {0, 1}}), {1.0}, {0.0, 1}, 2);
  ASSERT_TRUE(c.ok());
  EXPECT_NEAR((*c)[0], 0.5, 1e-15);
  EXPECT_NEAR((*c)[1], 0.5, 1e-15);
}

TEST(PrivatizeFlatTest, RejectsBadInput) {
  EXPECT_FALSE(PrivatizeFlat(Rows({{1, 0}}), {1.0}, {0.0, 1}, 2).ok());
  EXPECT_FALSE(PrivatizeFlat(Rows({{1, 0}}), {0.0}, {0.0, 1}, 1).ok());
  EXPECT_FALSE(PrivatizeFlat(Rows({{1, 0}}), {1.0}, {-1.0, 1}, 1).ok());
  EXPECT_FALSE(PrivatizeFlat(Rows({{NAN, 0}}), {1.0}, {0.0, 1}, 1).ok());
  EXPECT_FALSE(
      PrivatizeWithDivisor(Rows({{1, 0}}), {1.0}, {0.0, 1}, 1.0, 3).ok());
}

TEST(PrivatizeFlatTest, MatchesIndependentOracle) {
  const Matrix g = RandomMatrix(16, 7, 3, 2.0);
  PerExampleGradients grads{g, {}};
  for (double sigma : {0.0, 0.7, 3.0}) {
    auto got = PrivatizeFlat(grads, {1.3}, {sigma, 99}, 16);
    ASSERT_TRUE(got.ok());
    const Vector want = FlatPrivatized(g, 1.3, sigma, SharedNoise(99, 7));
    for (size_t j = 0; j < 7; ++j) EXPECT_NEAR((*got)[j], want[j], 1e-14);
  }
}

TEST(PrivatizeFlatTest, NoisePathIsolated) {
  auto got = PrivatizeFlat({Matrix(4, 3, 0.0), {}}, {1.0}, {2.0, 11}, 4);
  ASSERT_TRUE(got.ok());
  const Vector xi = SharedNoise(11, 3);
  for (size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ((*got)[j], 0.5 * xi[j]);
}

TEST(PrivatizeFlatTest, BoundedSensitivity) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix g = RandomMatrix(8, 4, 100 + trial, std::exp(2 * rng.Normal()));
    auto a = PrivatizeFlat({g, {}}, {0.5}, {0.0, 1}, 8);
    const int64_t row = static_cast<int64_t>(rng.UniformInt(8));
    for (double& v : g.Row(row)) v = 50 * rng.Normal();
    auto b = PrivatizeFlat({g, {}}, {0.5}, {0.0, 1}, 8);
    ASSERT_TRUE(a.ok() && b.ok());
    Vector diff(4);
    for (size_t j = 0; j < 4; ++j) diff[j] = (*a)[j] - (*b)[j];
    EXPECT_LE(Norm2(diff), 2.0 / 8 + 1e-12);
  }
}

TEST(SharedNoiseTest, DeterministicPerSeed) {
  EXPECT_EQ(SharedNoise(3, 10), SharedNoise(3, 10));
  EXPECT_NE(SharedNoise(3, 10), SharedNoise(4, 10));
}

TEST(WelfordTest, RunningMeans) {
  Vector m{0.0};
  m = WelfordUpdate(m, Vector{1.0}, 1);
  EXPECT_DOUBLE_EQ(m[0], 1.0);
  m = WelfordUpdate(m, Vector{2.0}, 2);
  EXPECT_DOUBLE_EQ(m[0], 1.5);
  m = WelfordUpdate(m, Vector{3.0}, 3);
  EXPECT_DOUBLE_EQ(m[0], 2.0);
  EXPECT_EQ(WelfordUpdate(Vector{7.0, 1.0}, Vector{-2.0, 5.0}, 1),
            (Vector{-2.0, 5.0}));
}

TEST(WelfordTest, MatchesNaiveMean) {
  Rng rng(17);
  Vector m{0.0};
  double sum = 0.0;
  for (int i = 1; i <= 10000; ++i) {
    const double v = 10 + rng.Normal();
    sum += v;
    m = WelfordUpdate(m, Vector{v}, i);
  }
  EXPECT_NEAR(m[0], sum / 10000, 1e-10 * std::abs(sum / 10000));
}

TEST(ShardedTest, DegeneratePlanEqualsFlatExactly) {
  const Matrix x = RandomMatrix(6, 3, 21, 1.0);
  const auto grad = TestGradient(5);
  auto sharded = PrivatizeSharded(x, grad, 5, {1, 1, 6}, {0.8}, {1.5, 4});
  PerExampleGradients rows{Matrix(6, 5), {}};
  for (int64_t i = 0; i < 6; ++i) {
    const Vector g = grad(i, x.Row(i));
    std::copy(g.begin(), g.end(), rows.rows.Row(i).begin());
  }
  auto flat = PrivatizeFlat(rows, {0.8}, {1.5, 4}, 6);
  ASSERT_TRUE(sharded.ok() && flat.ok());
  EXPECT_EQ(*sharded, *flat);
}

TEST(ShardedTest, PartitionInvarianceOnEightExamples) {
  const Matrix x = RandomMatrix(8, 4, 31, 1.0);
  const auto grad = TestGradient(6);
  std::vector<Vector> outs;
  for (ShardingPlan plan : {ShardingPlan{4, 1, 2}, ShardingPlan{1, 4, 2},
                            ShardingPlan{2, 2, 2}, ShardingPlan{8, 1, 1}}) {
    auto g = PrivatizeSharded(x, grad, 6, plan, {1.0}, {0.9, 12});
    ASSERT_TRUE(g.ok());
    outs.push_back(*g);
  }
  PerExampleGradients rows{Matrix(8, 6), {}};
  for (int64_t i = 0; i < 8; ++i) {
    const Vector g = grad(i, x.Row(i));
    std::copy(g.begin(), g.end(), rows.rows.Row(i).begin());
  }
  const Vector want = FlatPrivatized(rows.rows, 1.0, 0.9, SharedNoise(12, 6));
  for (const auto& o : outs) {
    for (size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(o[j], want[j], 1e-5 * std::abs(want[j]) + 1e-15);
    }
  }
}

TEST(ShardedTest, AugmentationAveragingMatchesOracle) {
  const Matrix x = RandomMatrix(4, 3, 41, 1.0);
  const auto grad = TestGradient(3);
  ShardedOptions options;
  options.k_aug = 5;
  options.augment = JitterAugment(0.3);
  options.augment_seed = 77;
  auto got = PrivatizeSharded(x, grad, 3, {2, 2, 1}, {0.5}, {0.4, 8}, options);
  ASSERT_TRUE(got.ok());
  Matrix averaged(4, 3, 0.0);
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 5; ++j) {
      const Vector xa = options.augment(x.Row(i), AugmentKey(77, i, j));
      const Vector g = grad(i, xa);
      for (int64_t q = 0; q < 3; ++q) averaged(i, q) += g[q] / 5;
    }
  }
  const Vector want = FlatPrivatized(averaged, 0.5, 0.4, SharedNoise(8, 3));
  for (size_t j = 0; j < 3; ++j) EXPECT_NEAR((*got)[j], want[j], 1e-12);
}

TEST(ShardedTest, WorkerCountDoesNotChangeOutput) {
  const Matrix x = RandomMatrix(24, 5, 51, 1.0);
  const auto grad = TestGradient(9);
  ShardedOptions one;
  ShardedOptions many;
  many.workers = 4;
  auto a = PrivatizeSharded(x, grad, 9, {6, 2, 2}, {1.0}, {1.0, 3}, one);
  auto b = PrivatizeSharded(x, grad, 9, {6, 2, 2}, {1.0}, {1.0, 3}, many);
  ASSERT_TRUE(a.ok() && b.ok());
  EXPECT_EQ(*a, *b);
}

TEST(ShardedTest, RejectsBatchMismatch) {
  const Matrix x = RandomMatrix(7, 2, 1, 1.0);
  EXPECT_FALSE(PrivatizeSharded(x, TestGradient(2), 2, {2, 2, 2}, {1.0},
                                {0.0, 1})
                   .ok());
  ShardedOptions bad;
  bad.k_aug = 0;
  EXPECT_FALSE(PrivatizeSharded(x, TestGradient(2), 2, {1, 1, 7}, {1.0},
                                {0.0, 1}, bad)
                   .ok());
  EXPECT_FALSE(PrivatizeSharded(x, TestGradient(2), 2, {0, 1, 7}, {1.0},
                                {0.0, 1})
                   .ok());
}

TEST(AugmentTest, MaskingAndIdentity) {
  const Vector x{1, 2, 3, 4};
  EXPECT_EQ(IdentityAugment()(x, 5), x);
  EXPECT_EQ(MaskingAugment(1.0, -1.0)(x, 5), (Vector{-1, -1, -1, -1}));
  EXPECT_EQ(MaskingAugment(0.0)(x, 5), x);
  EXPECT_EQ(JitterAugment(0.1)(x, 9), JitterAugment(0.1)(x, 9));
}

}  // namespace
}  // namespace dpforge::privatizer
