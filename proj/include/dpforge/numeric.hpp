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

#ifndef DPFORGE_NUMERIC_HPP_
#define DPFORGE_NUMERIC_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/strings/str_cat.h"
#include "boost/math/special_functions/erf.hpp"

namespace dpforge {

using Vector = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Dense row-major matrix of doubles.
struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int64_t r, int64_t c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}

  double& operator()(int64_t r, int64_t c) { return data[r * cols + c]; }
  double operator()(int64_t r, int64_t c) const { return data[r * cols + c]; }

  std::span<double> Row(int64_t r) {
    return {data.data() + r * cols, static_cast<size_t>(cols)};
  }
  std::span<const double> Row(int64_t r) const {
    return {data.data() + r * cols, static_cast<size_t>(cols)};
  }

  bool operator==(const Matrix&) const = default;
};

inline double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double Norm2(std::span<const double> v) { return std::sqrt(Dot(v, v)); }

inline double NormalPdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// Phi(x), accurate in the far left tail.
inline double NormalCdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// 1 - Phi(x), accurate in the far right tail.
inline double NormalSf(double x) {
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

inline double NormalQuantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double LogSumExp(std::span<const double> v) {
  double m = -kInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance tol.
inline double IntegrateAdaptive(const std::function<double(double)>& f,
                                double a, double b, double tol,
                                int max_depth = 50) {
  struct Rec {
    const std::function<double(double)>& f;
    double Run(double a, double b, double fa, double fm, double fb,
               double whole, double tol, int depth) const {
      const double m = 0.5 * (a + b);
      const double lm = 0.5 * (a + m);
      const double rm = 0.5 * (m + b);
      const double flm = f(lm);
      const double frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double delta = left + right - whole;
      if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
      }
      return Run(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
             Run(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  };
  // Seed with a fixed uniform partition so narrow features are not skipped.
  constexpr int kPanels = 64;
  const double h = (b - a) / kPanels;
  double total = 0.0;
  Rec rec{f};
  for (int i = 0; i < kPanels; ++i) {
    const double lo = a + i * h;
    const double hi = (i + 1 == kPanels) ? b : lo + h;
    const double flo = f(lo);
    const double fhi = f(hi);
    const double fm = f(0.5 * (lo + hi));
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi);
    total += rec.Run(lo, hi, flo, fm, fhi, whole, tol / kPanels, max_depth);
  }
  return total;
}

// Bisection for a root of a function that changes sign on [lo, hi].
inline double Bisect(const std::function<double(double)>& f, double lo,
                     double hi, double abs_tol, int max_iter = 200) {
  double flo = f(lo);
  for (int i = 0; i < max_iter && hi - lo > abs_tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline absl::Status CheckFinite(std::span<const double> v,
                                std::string_view what) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      return absl::InvalidArgumentError(
          absl::StrCat(std::string(what), " has non-finite entry at index ", i));
    }
  }
  return absl::OkStatus();
}

}  // namespace dpforge

#endif  // DPFORGE_NUMERIC_HPP_
