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

// What an (epsilon, delta) guarantee means for an attacker.
//
// * Membership inference: any test between "x in the training set" and
//   "x not in it" has Type I error alpha and Type II error beta with
//   beta >= max(0, 1 - delta - e^eps alpha, e^-eps (1 - delta - alpha)).
// * Membership advantage 1 - alpha - beta is at most
//   (1 - delta) tanh(eps / 2) + delta.
// * K-choice inference (pick the member among K equally likely records):
//   the guarantee is matched to the Gaussian trade-off curve with parameter
//   mu passing through (eps, delta); the best K-choice success against a
//   mu-Gaussian mechanism is int phi(z) Phi(z + mu)^(K-1) dz.
// * The crowd threshold is the smallest K for which that success is at most
//   one half.

#ifndef DPFORGE_INTERPRET_HPP_
#define DPFORGE_INTERPRET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/accountant.hpp"
#include "dpforge/numeric.hpp"

namespace dpforge::interpret {

using accountant::PrivacyBudget;

inline constexpr double kMinMu = 1e-6;
inline constexpr double kMaxMu = 100.0;

struct TradeoffRegion {
  std::vector<double> alpha_grid;
  std::vector<double> beta_lower;
};

// Interpretation accepts the closed limits eps = 0 and delta = 1.
inline absl::Status ValidateBudget(const PrivacyBudget& b) {
  if (!(b.epsilon >= 0) || !std::isfinite(b.epsilon)) {
    return absl::InvalidArgumentError(
        absl::StrCat("epsilon must be finite and >= 0, got ", b.epsilon));
  }
  if (!(b.delta >= 0 && b.delta <= 1)) {
    return absl::InvalidArgumentError(
        absl::StrCat("delta must lie in [0, 1], got ", b.delta));
  }
  return absl::OkStatus();
}

inline double BetaLower(const PrivacyBudget& b, double alpha) {
  const double e = std::exp(b.epsilon);
  return std::max({0.0, 1.0 - b.delta - e * alpha,
                   (1.0 - b.delta - alpha) / e});
}

// beta_lower on alpha = 0, 1/(n-1), ..., 1.
inline absl::StatusOr<TradeoffRegion> MiaRegion(const PrivacyBudget& budget,
                                                int64_t grid_size) {
  if (auto st = ValidateBudget(budget); !st.ok()) return st;
  if (grid_size < 2) return absl::InvalidArgumentError("grid_size must be >= 2");
  TradeoffRegion r;
  for (int64_t i = 0; i < grid_size; ++i) {
    const double a = static_cast<double>(i) / static_cast<double>(grid_size - 1);
    r.alpha_grid.push_back(a);
    r.beta_lower.push_back(BetaLower(budget, a));
  }
  return r;
}

inline absl::StatusOr<double> AdvantageUpper(const PrivacyBudget& budget) {
  if (auto st = ValidateBudget(budget); !st.ok()) return st;
  return (1.0 - budget.delta) * std::tanh(0.5 * budget.epsilon) + budget.delta;
}

// delta(eps) of the mu-Gaussian trade-off curve.
inline double GaussianDelta(double mu, double epsilon) {
  if (mu <= 0) return 0.0;
  // e^eps Phi(.) in log space; the product overflows for large eps.
  const double tail = NormalCdf(-epsilon / mu - 0.5 * mu);
  const double second = tail > 0 ? std::exp(epsilon + std::log(tail)) : 0.0;
  return NormalCdf(-epsilon / mu + 0.5 * mu) - second;
}

// The mu whose Gaussian curve passes through (eps, delta); delta_mu(eps) is
// increasing in mu, so this is a bisection on log mu over [1e-6, 100]. If
// even mu = 1e-6 exceeds delta (eps tiny, delta = 0) the guarantee is
// indistinguishable from mu = 0 and 0 is returned.
inline absl::StatusOr<double> CalibrateMu(const PrivacyBudget& budget) {
  if (auto st = ValidateBudget(budget); !st.ok()) return st;
  const double eps = budget.epsilon;
  const double delta = budget.delta;
  if (GaussianDelta(kMinMu, eps) >= delta) return 0.0;
  if (GaussianDelta(kMaxMu, eps) < delta) {
    return absl::OutOfRangeError(absl::StrCat(
        "interpretation failure: no mu in [", kMinMu, ", ", kMaxMu,
        "] matches (", eps, ", ", delta, ")"));
  }
  double lo = std::log(kMinMu);
  double hi = std::log(kMaxMu);
  for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (GaussianDelta(std::exp(mid), eps) < delta) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

// int phi(z) Phi(z + mu)^(K - 1) dz over [-10, 10].
inline double KChoiceSuccessForMu(double mu, int64_t k_choices) {
  if (mu <= 0) return 1.0 / static_cast<double>(k_choices);
  const double km1 = static_cast<double>(k_choices - 1);
  auto f = [&](double z) {
    const double c = NormalCdf(z + mu);
    return c <= 0 ? 0.0 : NormalPdf(z) * std::exp(km1 * std::log(c));
  };
  const double v = IntegrateAdaptive(f, -10.0, 10.0, 1e-9);
  return std::clamp(v, 1.0 / static_cast<double>(k_choices), 1.0);
}

inline absl::StatusOr<double> KChoiceSuccess(const PrivacyBudget& budget,
                                             int64_t k_choices) {
  if (k_choices < 2) return absl::InvalidArgumentError("k_choices must be >= 2");
  auto mu = CalibrateMu(budget);
  if (!mu.ok()) return mu.status();
  return KChoiceSuccessForMu(*mu, k_choices);
}

// Smallest K >= 2 with KChoiceSuccess <= 1/2: exponential bracketing, then
// bisection on the monotone success curve.
inline absl::StatusOr<int64_t> CrowdThreshold(const PrivacyBudget& budget) {
  auto mu = CalibrateMu(budget);
  if (!mu.ok()) return mu.status();
  auto ok = [&](int64_t k) { return KChoiceSuccessForMu(*mu, k) <= 0.5; };
  if (ok(2)) return 2;
  int64_t lo = 2;  // success > 1/2
  int64_t hi = 4;
  while (!ok(hi)) {
    lo = hi;
    if (hi > (int64_t{1} << 40)) {
      return absl::OutOfRangeError("crowd threshold exceeds 2^40");
    }
    hi *= 2;
  }
  while (hi - lo > 1) {
    const int64_t mid = lo + (hi - lo) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace dpforge::interpret

#endif  // DPFORGE_INTERPRET_HPP_
