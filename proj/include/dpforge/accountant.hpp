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

// Privacy accounting for DP-SGD with privacy loss distributions (PLDs).
//
// A PLD is the distribution of the privacy loss L = log(P(o) / Q(o)) for
// o ~ P, where (P, Q) are the output distributions of a mechanism on two
// neighbouring datasets. Its hockey-stick divergence gives the tight
// delta(epsilon) curve, and composition of independent mechanisms is
// convolution of their PLDs.
//
// Discretisation is pessimistic: mass between grid values is split so that
// the discrete delta(eps) curve dominates the exact one everywhere, and
// truncated tails go to a larger loss or to the infinity atom, so reported
// epsilons are upper bounds.
//
// Neighbouring datasets differ by adding or removing one record, and batches
// are Poisson-subsampled with rate q. The two directions give different PLDs
// ("remove": P is the mixture (1-q) N(0, s^2) + q N(1, s^2), Q = N(0, s^2);
// "add": the roles are swapped). Mechanism-level functions take the worse of
// the two after composition.

#ifndef DPFORGE_ACCOUNTANT_HPP_
#define DPFORGE_ACCOUNTANT_HPP_

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpforge/numeric.hpp"

namespace dpforge::accountant {

inline constexpr double kDefaultGridStep = 1e-4;
inline constexpr double kDefaultTailMass = 1e-12;
// Largest FFT / bin count we are willing to allocate (doubles).
inline constexpr int64_t kMaxBins = int64_t{1} << 25;

struct PrivacyBudget {
  double epsilon = 1.0;
  double delta = 1e-5;

  absl::Status Validate() const {
    if (!(epsilon > 0) || !std::isfinite(epsilon)) {
      return absl::InvalidArgumentError(
          absl::StrCat("epsilon must be positive and finite, got ", epsilon));
    }
    if (!(delta >= 0 && delta < 1)) {
      return absl::InvalidArgumentError(
          absl::StrCat("delta must lie in [0, 1), got ", delta));
    }
    return absl::OkStatus();
  }
};

// The DP-SGD privacy triple: noise multiplier, sampling ratio B/N, steps T.
struct MechanismSpec {
  double sigma = 1.0;
  double q = 1.0;
  int64_t steps = 1;

  absl::Status Validate() const {
    if (!(sigma > 0) || !std::isfinite(sigma)) {
      return absl::InvalidArgumentError(
          absl::StrCat("sigma must be positive, got ", sigma));
    }
    if (!(q > 0 && q <= 1)) {
      return absl::InvalidArgumentError(
          absl::StrCat("sampling ratio must lie in (0, 1], got ", q));
    }
    if (steps < 1) {
      return absl::InvalidArgumentError(
          absl::StrCat("steps must be at least 1, got ", steps));
    }
    return absl::OkStatus();
  }
};

enum class Adjacency { kRemove, kAdd };

// Discretised privacy loss distribution. Bin i carries the loss value
// (origin_index + i) * grid_step; grids with equal step are aligned.
class PrivacyLossDistribution {
 public:
  static absl::StatusOr<PrivacyLossDistribution> Create(
      double grid_step, int64_t origin_index, std::vector<double> masses,
      double infinity_mass, double truncated_mass = 0.0) {
    if (!(grid_step > 0) || !std::isfinite(grid_step)) {
      return absl::InvalidArgumentError("grid_step must be positive");
    }
    double total = infinity_mass;
    for (double m : masses) {
      if (!(m >= 0)) return absl::InvalidArgumentError("negative mass");
      total += m;
    }
    if (!(infinity_mass >= 0) || std::abs(total - 1.0) > 1e-9) {
      return absl::InvalidArgumentError(
          absl::StrCat("masses must sum to 1, got ", total));
    }
    return PrivacyLossDistribution(grid_step, origin_index, std::move(masses),
                                   infinity_mass, truncated_mass);
  }

  double grid_step() const { return grid_step_; }
  int64_t origin_index() const { return origin_index_; }
  // Loss value of bin 0.
  double origin() const { return static_cast<double>(origin_index_) * grid_step_; }
  const std::vector<double>& masses() const { return masses_; }
  double infinity_mass() const { return infinity_mass_; }
  // Tail mass that discretisation or truncation moved pessimistically.
  double truncated_mass() const { return truncated_mass_; }
  size_t size() const { return masses_.size(); }

  double LossAt(size_t i) const {
    return static_cast<double>(origin_index_ + static_cast<int64_t>(i)) *
           grid_step_;
  }

  double TotalMass() const {
    double total = infinity_mass_;
    for (double m : masses_) total += m;
    return total;
  }

 private:
  PrivacyLossDistribution(double grid_step, int64_t origin_index,
                          std::vector<double> masses, double infinity_mass,
                          double truncated_mass)
      : grid_step_(grid_step),
        origin_index_(origin_index),
        masses_(std::move(masses)),
        infinity_mass_(infinity_mass),
        truncated_mass_(truncated_mass) {}

  double grid_step_;
  int64_t origin_index_;
  std::vector<double> masses_;
  double infinity_mass_;
  double truncated_mass_;
};

// An ordered list of (epsilon, delta) pairs of one mechanism.
struct PrivacyCurve {
  std::vector<std::pair<double, double>> points;
};

namespace internal {

// Mixture (1 - q) N(0, s^2) + q N(1, s^2), or a plain N(0, s^2) when
// `mixture` is false.
struct NoiseDistribution {
  double sigma;
  double q;
  bool mixture;

  double Cdf(double x) const {
    if (x == -kInf) return 0.0;
    if (x == kInf) return 1.0;
    if (!mixture) return NormalCdf(x / sigma);
    return (1.0 - q) * NormalCdf(x / sigma) + q * NormalCdf((x - 1.0) / sigma);
  }
  double Sf(double x) const {
    if (x == -kInf) return 1.0;
    if (x == kInf) return 0.0;
    if (!mixture) return NormalSf(x / sigma);
    return (1.0 - q) * NormalSf(x / sigma) + q * NormalSf((x - 1.0) / sigma);
  }
  // P(a < X <= b), computed on whichever side avoids cancellation.
  double Mass(double a, double b) const {
    if (!(b > a)) return 0.0;
    const double center = mixture ? 0.5 : 0.0;
    if (a >= center) return std::max(0.0, Sf(a) - Sf(b));
    return std::max(0.0, Cdf(b) - Cdf(a));
  }
};

// log(1 - q + q * exp(a)), stable for large |a|.
inline double LogMixtureRatio(double a, double q) {
  if (q == 1.0) return a;
  if (a > 0) return a + std::log(q + (1.0 - q) * std::exp(-a));
  return std::log1p(q * std::expm1(a));
}

// Solves LogMixtureRatio(a, q) = v for a; -inf when v <= log(1 - q).
inline double InverseLogMixtureRatio(double v, double q) {
  if (q == 1.0) return v;
  if (v <= std::log1p(-q)) return -kInf;
  // exp(a) = (exp(v) - (1 - q)) / q
  if (v > 1.0) {
    return v + std::log1p(-(1.0 - q) * std::exp(-v)) - std::log(q);
  }
  return std::log(std::expm1(v) + q) - std::log(q);
}

inline int64_t CeilIndex(double loss, double grid_step) {
  // Absorb representation error so that exact grid points stay put.
  const double scaled = loss / grid_step;
  const double nearest = std::round(scaled);
  if (std::abs(scaled - nearest) < 1e-9 * std::max(1.0, std::abs(scaled))) {
    return static_cast<int64_t>(nearest);
  }
  return static_cast<int64_t>(std::ceil(scaled));
}

// Owns an FFTW plan pair for real convolutions of a given length.
class RealFft {
 public:
  explicit RealFft(int64_t n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spectrum_ = fftw_alloc_complex(n / 2 + 1);
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spectrum_,
                                    FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spectrum_, real_,
                                     FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(real_);
    fftw_free(spectrum_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* real() { return real_; }
  std::complex<double>* spectrum() {
    return reinterpret_cast<std::complex<double>*>(spectrum_);
  }
  int64_t spectrum_size() const { return n_ / 2 + 1; }
  void Forward() { fftw_execute(forward_); }
  // Unnormalised inverse; divide by n afterwards.
  void Backward() { fftw_execute(backward_); }

 private:
  int64_t n_;
  double* real_;
  fftw_complex* spectrum_;
  fftw_plan forward_;
  fftw_plan backward_;
};

inline int64_t NextPowerOfTwo(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace internal

// PLD of one Poisson-subsampled Gaussian step with noise multiplier `sigma`
// (sensitivity 1) and sampling ratio `q`, for the given adjacency direction.
//
// The probability mass whose loss falls between two neighbouring grid values
// is split between them so that both the P- and the Q-mass are preserved.
// The discrete hockey-stick curve then equals the exact one at every grid
// value and is a chord of it (in exp(eps)) in between, hence an upper bound.
// Mass below the lowest grid value, which only exists when q = 1 forces a
// truncation, is rounded up onto it.
inline absl::StatusOr<PrivacyLossDistribution> SubsampledGaussianPld(
    double sigma, double q, double grid_step = kDefaultGridStep,
    Adjacency direction = Adjacency::kRemove,
    double tail_mass = kDefaultTailMass) {
  if (!(sigma > 0) || !std::isfinite(sigma)) {
    return absl::InvalidArgumentError(
        absl::StrCat("sigma must be positive, got ", sigma));
  }
  if (!(grid_step > 0) || !std::isfinite(grid_step)) {
    return absl::InvalidArgumentError(
        absl::StrCat("grid_step must be positive, got ", grid_step));
  }
  if (!(q > 0 && q <= 1)) {
    return absl::InvalidArgumentError(
        absl::StrCat("sampling ratio must lie in (0, 1], got ", q));
  }
  if (!(tail_mass > 0 && tail_mass < 1)) {
    return absl::InvalidArgumentError(
        absl::StrCat("tail_mass must lie in (0, 1), got ", tail_mass));
  }
  const double s2 = sigma * sigma;
  const double z = -NormalQuantile(0.5 * tail_mass);
  const bool remove = direction == Adjacency::kRemove;
  const bool bounded = q < 1.0;
  // Exponent of the Gaussian likelihood ratio N(1,s^2)/N(0,s^2) at x.
  auto exponent = [s2](double x) { return (2.0 * x - 1.0) / (2.0 * s2); };
  // P is the distribution of the output x, Q the neighbouring one.
  const internal::NoiseDistribution p{sigma, q, remove};
  const internal::NoiseDistribution qd{sigma, q, !remove};
  // Loss as a function of x: increasing for remove, decreasing for add.
  auto loss = [&](double x) {
    const double v = internal::LogMixtureRatio(exponent(x), q);
    return remove ? v : -v;
  };
  // x at which the loss crosses l; {loss > l} is {x > t} for remove and
  // {x < t} for add. -inf when the event is everything (remove) or empty
  // (add).
  auto threshold = [&](double l) {
    const double a = internal::InverseLogMixtureRatio(remove ? l : -l, q);
    return a == -kInf ? -kInf : s2 * a + 0.5;
  };
  // (P, Q) mass of {l_a < loss <= l_b} given the thresholds of l_a and l_b.
  auto band = [&](double ta, double tb) {
    return remove ? std::pair{p.Mass(ta, tb), qd.Mass(ta, tb)}
                  : std::pair{p.Mass(tb, ta), qd.Mass(tb, ta)};
  };

  const double x_lo = -z * sigma;
  const double x_hi = (remove ? 1.0 : 0.0) + z * sigma;
  // Lowest and highest losses kept on the grid.
  double l_min = remove ? loss(x_lo) : loss(x_hi);
  double l_max = remove ? loss(x_hi) : loss(x_lo);
  if (bounded) {
    if (remove) l_min = std::log1p(-q);  // exact infimum, nothing truncated
    if (!remove) l_max = -std::log1p(-q);  // exact supremum
  }
  const int64_t lo_index = -internal::CeilIndex(-l_min, grid_step);
  const int64_t hi_index = internal::CeilIndex(l_max, grid_step);
  if (hi_index - lo_index + 1 > kMaxBins) {
    return absl::ResourceExhaustedError(absl::StrCat(
        "PLD would need ", hi_index - lo_index + 1,
        " bins; increase grid_step"));
  }
  const size_t n = static_cast<size_t>(hi_index - lo_index + 1);
  std::vector<double> masses(n, 0.0);

  // Below the grid: everything with loss <= l_lo goes to l_lo.
  double t_prev = threshold(static_cast<double>(lo_index) * grid_step);
  const double below = remove ? p.Cdf(t_prev) : p.Sf(t_prev);
  masses[0] = below;
  double truncated = bounded && remove ? 0.0 : below;
  for (size_t i = 1; i < n; ++i) {
    const double l_a =
        static_cast<double>(lo_index + static_cast<int64_t>(i) - 1) *
        grid_step;
    const double t = threshold(l_a + grid_step);
    auto [pm, qm] = band(t_prev, t);
    // P-mass sent to the upper end is exp(l_b) * w, where the Q-mass w
    // solves pm = exp(l_a) (qm - w) + exp(l_b) w.
    const double excess = pm - std::exp(l_a) * qm;
    const double upper = std::clamp(
        excess * std::exp(grid_step) / std::expm1(grid_step), 0.0, pm);
    masses[i - 1] += pm - upper;
    masses[i] += upper;
    t_prev = t;
  }
  // Above the grid: exp(l_hi) Q(E) stays at l_hi, the rest is infinite loss.
  const double l_hi = static_cast<double>(hi_index) * grid_step;
  const double p_above = remove ? p.Sf(t_prev) : p.Cdf(t_prev);
  const double q_above = remove ? qd.Sf(t_prev) : qd.Cdf(t_prev);
  const double kept = std::clamp(std::exp(l_hi) * q_above, 0.0, p_above);
  masses[n - 1] += kept;
  double infinity_mass = p_above - kept;
  truncated += p_above;

  // Normalise away the O(1e-16) drift of CDF differences.
  double total = infinity_mass;
  for (double m : masses) total += m;
  for (double& m : masses) m /= total;
  infinity_mass /= total;
  // Trim empty bins at either end.
  size_t first = 0;
  while (first + 1 < masses.size() && masses[first] == 0.0) ++first;
  size_t last = masses.size();
  while (last > first + 1 && masses[last - 1] == 0.0) --last;
  std::vector<double> trimmed(masses.begin() + first, masses.begin() + last);
  return PrivacyLossDistribution::Create(
      grid_step, lo_index + static_cast<int64_t>(first), std::move(trimmed),
      infinity_mass, truncated);
}

// delta(epsilon) = infinity_mass + sum_l mass(l) * max(0, 1 - exp(eps - l)).
inline double DeltaAtEpsilon(const PrivacyLossDistribution& pld,
                             double epsilon) {
  double delta = 0.0;
  const auto& masses = pld.masses();
  for (size_t i = masses.size(); i-- > 0;) {
    const double loss = pld.LossAt(i);
    if (loss <= epsilon) break;
    delta += masses[i] * -std::expm1(epsilon - loss);
  }
  return std::clamp(delta + pld.infinity_mass(), 0.0, 1.0);
}

// Smallest epsilon >= 0 with DeltaAtEpsilon(pld, epsilon) <= delta. The
// hockey-stick divergence of a discrete PLD is A - exp(eps) * B between
// consecutive loss values, so the inverse is solved in closed form.
inline absl::StatusOr<double> EpsilonAtDelta(const PrivacyLossDistribution& pld,
                                             double delta) {
  if (!(delta > pld.infinity_mass())) {
    return absl::FailedPreconditionError(absl::StrCat(
        "delta ", delta, " is not above the infinity mass ",
        pld.infinity_mass(), "; no finite epsilon attains it"));
  }
  const auto& masses = pld.masses();
  double tail_mass = pld.infinity_mass();  // A: mass with loss > eps (+ inf)
  double tail_weighted = 0.0;              // B: sum mass * exp(-loss)
  for (size_t i = masses.size(); i-- > 0;) {
    const double loss = pld.LossAt(i);
    tail_mass += masses[i];
    tail_weighted += masses[i] * std::exp(-loss);
    const double below = (i == 0) ? -kInf : pld.LossAt(i - 1);
    // On [below, loss): delta(eps) = tail_mass - exp(eps) * tail_weighted.
    const double at_below =
        (i == 0) ? tail_mass : tail_mass - std::exp(below) * tail_weighted;
    if (at_below > delta || i == 0) {
      if (tail_weighted <= 0.0) return std::max(0.0, loss);
      const double eps = std::log((tail_mass - delta) / tail_weighted);
      return std::max(0.0, std::min(eps, loss));
    }
  }
  return 0.0;
}

inline PrivacyCurve CurveOf(const PrivacyLossDistribution& pld,
                            std::span<const double> epsilons) {
  PrivacyCurve curve;
  for (double e : epsilons) curve.points.emplace_back(e, DeltaAtEpsilon(pld, e));
  return curve;
}

// Cumulant generating function log E[exp(t L)] over the finite part.
inline double LogMgf(const PrivacyLossDistribution& pld, double t) {
  std::vector<double> terms;
  terms.reserve(pld.size());
  for (size_t i = 0; i < pld.size(); ++i) {
    if (pld.masses()[i] > 0) {
      terms.push_back(std::log(pld.masses()[i]) + t * pld.LossAt(i));
    }
  }
  return LogSumExp(terms);
}

// PLD of `steps`-fold independent composition. The output window is chosen by
// Chernoff bounds so that each excluded tail has mass at most `tail_mass`;
// excluded mass wraps around in the circular convolution, and an upper bound
// on it is added to the infinity atom, keeping the result pessimistic.
inline absl::StatusOr<PrivacyLossDistribution> SelfCompose(
    const PrivacyLossDistribution& pld, int64_t steps,
    double tail_mass = kDefaultTailMass) {
  if (steps < 1) {
    return absl::InvalidArgumentError(
        absl::StrCat("steps must be at least 1, got ", steps));
  }
  if (steps == 1) return pld;
  const double step = pld.grid_step();
  const auto n = static_cast<int64_t>(pld.size());
  const double t_steps = static_cast<double>(steps);
  const double log_tail = std::log(tail_mass);

  // Support of the composed finite part, in bin units.
  const int64_t support_lo = steps * pld.origin_index();
  const int64_t support_hi = steps * (pld.origin_index() + n - 1);
  int64_t window_lo = support_lo;
  int64_t window_hi = support_hi;
  auto to_bins = [step](double loss) {
    return std::clamp(loss / step, -4e15, 4e15);
  };
  for (double t = 1e-3; t <= 2e3; t *= 1.2) {
    const double hi = (t_steps * LogMgf(pld, t) - log_tail) / t;
    const double lo = -(t_steps * LogMgf(pld, -t) - log_tail) / t;
    if (!std::isnan(hi)) {
      window_hi = std::min<int64_t>(
          window_hi, static_cast<int64_t>(std::ceil(to_bins(hi))) + 1);
    }
    if (!std::isnan(lo)) {
      window_lo = std::max<int64_t>(
          window_lo, static_cast<int64_t>(std::floor(to_bins(lo))) - 1);
    }
  }
  window_lo = std::min(window_lo, window_hi);
  const int64_t width = window_hi - window_lo + 1;
  const int64_t fft_size = internal::NextPowerOfTwo(std::max(width, n));
  if (fft_size > kMaxBins) {
    return absl::ResourceExhaustedError(absl::StrCat(
        "composition needs an FFT of size ", fft_size, "; increase grid_step"));
  }

  internal::RealFft fft(fft_size);
  std::fill(fft.real(), fft.real() + fft_size, 0.0);
  std::copy(pld.masses().begin(), pld.masses().end(), fft.real());
  fft.Forward();
  std::complex<double>* spec = fft.spectrum();
  for (int64_t k = 0; k < fft.spectrum_size(); ++k) {
    spec[k] = std::pow(spec[k], static_cast<double>(steps));
  }
  fft.Backward();

  std::vector<double> out(static_cast<size_t>(width));
  const double inv_n = 1.0 / static_cast<double>(fft_size);
  for (int64_t k = 0; k < width; ++k) {
    // Bin k of the window sits at composed offset (window_lo + k - support_lo).
    int64_t offset = (window_lo + k - support_lo) % fft_size;
    if (offset < 0) offset += fft_size;
    const double v = fft.real()[offset] * inv_n;
    // FFT round-off shows up as tiny (possibly negative) values.
    out[static_cast<size_t>(k)] = v > 1e-300 ? v : 0.0;
  }
  const double finite = std::pow(1.0 - pld.infinity_mass(), t_steps);
  double sum = 0.0;
  for (double v : out) sum += v;
  if (sum > 0) {
    for (double& v : out) v *= finite / sum;
  }
  const double wrapped = (window_lo > support_lo ? tail_mass : 0.0) +
                         (window_hi < support_hi ? tail_mass : 0.0);
  const double infinity = std::min(1.0, 1.0 - finite + wrapped);

  size_t first = 0;
  while (first + 1 < out.size() && out[first] == 0.0) ++first;
  size_t last = out.size();
  while (last > first + 1 && out[last - 1] == 0.0) --last;
  std::vector<double> trimmed(out.begin() + first, out.begin() + last);
  // The total may exceed one by `wrapped` (<= 2e-12 by default).
  return PrivacyLossDistribution::Create(
      step, window_lo + static_cast<int64_t>(first), std::move(trimmed),
      infinity, pld.truncated_mass() * t_steps + wrapped);
}

// Both adjacency directions of a composed subsampled Gaussian mechanism.
struct MechanismPld {
  PrivacyLossDistribution remove;
  PrivacyLossDistribution add;
};

inline absl::StatusOr<MechanismPld> ComposedPld(
    const MechanismSpec& spec, double grid_step = kDefaultGridStep) {
  if (auto st = spec.Validate(); !st.ok()) return st;
  auto remove_step =
      SubsampledGaussianPld(spec.sigma, spec.q, grid_step, Adjacency::kRemove);
  if (!remove_step.ok()) return remove_step.status();
  auto remove = SelfCompose(*remove_step, spec.steps);
  if (!remove.ok()) return remove.status();
  if (spec.q == 1.0) {
    // Both directions coincide for the unsubsampled Gaussian.
    return MechanismPld{*remove, *remove};
  }
  auto add_step =
      SubsampledGaussianPld(spec.sigma, spec.q, grid_step, Adjacency::kAdd);
  if (!add_step.ok()) return add_step.status();
  auto add = SelfCompose(*add_step, spec.steps);
  if (!add.ok()) return add.status();
  return MechanismPld{*std::move(remove), *std::move(add)};
}

inline double DeltaAtEpsilon(const MechanismPld& pld, double epsilon) {
  return std::max(DeltaAtEpsilon(pld.remove, epsilon),
                  DeltaAtEpsilon(pld.add, epsilon));
}

inline absl::StatusOr<double> EpsilonAtDelta(const MechanismPld& pld,
                                             double delta) {
  auto remove = EpsilonAtDelta(pld.remove, delta);
  if (!remove.ok()) return remove.status();
  auto add = EpsilonAtDelta(pld.add, delta);
  if (!add.ok()) return add.status();
  return std::max(*remove, *add);
}

inline absl::StatusOr<double> EpsilonForMechanism(
    const MechanismSpec& spec, double delta,
    double grid_step = kDefaultGridStep) {
  auto pld = ComposedPld(spec, grid_step);
  if (!pld.ok()) return pld.status();
  return EpsilonAtDelta(*pld, delta);
}

namespace internal {

// Mean and variance of the single-step privacy loss in the remove direction,
// by quadrature over the noise.
inline std::pair<double, double> LossMoments(double sigma, double q) {
  const double s2 = sigma * sigma;
  auto loss = [&](double x) {
    return LogMixtureRatio((2.0 * x - 1.0) / (2.0 * s2), q);
  };
  double mean = 0.0;
  double second = 0.0;
  // Integrate each mixture component in its own standardised coordinate.
  for (int component = 0; component < 2; ++component) {
    const double weight = component == 0 ? 1.0 - q : q;
    if (weight == 0.0) continue;
    const double shift = component == 0 ? 0.0 : 1.0;
    constexpr int kPoints = 4000;
    constexpr double kRange = 9.0;
    const double h = 2.0 * kRange / kPoints;
    for (int k = 0; k <= kPoints; ++k) {
      const double u = -kRange + k * h;
      const double w = (k == 0 || k == kPoints) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      const double l = loss(shift + sigma * u);
      const double density = NormalPdf(u) * h / 3.0 * w * weight;
      mean += density * l;
      second += density * l * l;
    }
  }
  return {mean, std::max(0.0, second - mean * mean)};
}

// True when a Chebyshev bound on the composed loss already proves
// delta(epsilon) > delta, i.e. the budget is certainly violated.
inline bool CertainlyViolates(const MechanismSpec& spec,
                              const PrivacyBudget& budget) {
  const auto [mean, var] = LossMoments(spec.sigma, spec.q);
  const double t = static_cast<double>(spec.steps);
  const double gap = t * mean - budget.epsilon - std::log(2.0);
  if (!(gap > 0)) return false;
  const double below = t * var / (gap * gap);
  // delta(eps) >= P(L > eps + ln 2) / 2.
  return 0.5 * (1.0 - below) > budget.delta;
}

}  // namespace internal

struct CalibrationResult {
  double sigma = 0.0;
  double epsilon = 0.0;  // achieved epsilon at the budget's delta
  double infinity_mass = 0.0;
  double grid_step = kDefaultGridStep;
};

// Smallest noise multiplier in [1e-3, 1e4] meeting the budget after `steps`
// compositions with sampling ratio `q`. The returned sigma satisfies the
// budget and its epsilon is within 1e-3 relative of the target.
//
// The search runs on log(epsilon) against log(sigma), which is close to
// linear: secant steps bracket the root, then each refinement aims just past
// the secant estimate on the side opposite to the last move so that the
// bracket closes in a few evaluations. Geometric bisection is the fallback
// whenever epsilon is infinite or the secant misbehaves.
inline absl::StatusOr<CalibrationResult> CalibrateSigma(
    const PrivacyBudget& budget, double q, int64_t steps,
    double grid_step = kDefaultGridStep) {
  if (auto st = budget.Validate(); !st.ok()) return st;
  if (auto st = MechanismSpec{1.0, q, steps}.Validate(); !st.ok()) return st;
  constexpr double kMinSigma = 1e-3;
  constexpr double kMaxSigma = 1e4;
  constexpr double kRelTol = 1e-3;
  // Bracket width in log(sigma) below which the search gives up refining
  // (a discretized epsilon can plateau).
  constexpr double kMinWidth = 1e-9;
  const double log_tol = -std::log1p(-kRelTol);
  const double log_target = std::log(budget.epsilon);

  struct Point {
    double u = 0.0;    // log(sigma)
    double f = kInf;   // log(epsilon / target); +inf when unattainable
    double epsilon = kInf;
    double infinity_mass = 0.0;
    bool feasible() const { return f <= 0.0; }
  };
  // The remove direction dominates for the regimes of interest, so the add
  // direction is only composed when remove alone meets the budget.
  auto evaluate = [&](double u) -> absl::StatusOr<Point> {
    Point pt{u};
    const MechanismSpec spec{std::exp(u), q, steps};
    if (internal::CertainlyViolates(spec, budget)) return pt;
    double eps = 0.0;
    for (Adjacency dir : {Adjacency::kRemove, Adjacency::kAdd}) {
      if (dir == Adjacency::kAdd && q == 1.0) break;
      auto one = SubsampledGaussianPld(spec.sigma, q, grid_step, dir);
      if (!one.ok()) return one.status();
      auto pld = SelfCompose(*one, steps);
      if (!pld.ok()) return pld.status();
      pt.infinity_mass = std::max(pt.infinity_mass, pld->infinity_mass());
      if (budget.delta <= pld->infinity_mass()) return pt;
      auto e = EpsilonAtDelta(*pld, budget.delta);
      if (!e.ok()) return e.status();
      eps = std::max(eps, *e);
      if (eps > budget.epsilon) break;
    }
    pt.epsilon = eps;
    pt.f = eps > 0.0 ? std::log(eps) - log_target : -kInf;
    return pt;
  };
  auto result = [&](const Point& pt) {
    return CalibrationResult{std::exp(pt.u), pt.epsilon, pt.infinity_mass,
                             grid_step};
  };
  // Secant root of the line through a and b; nan if unusable.
  auto secant = [](const Point& a, const Point& b) {
    if (!std::isfinite(a.f) || !std::isfinite(b.f) || a.f == b.f) {
      return std::nan("");
    }
    return a.u - a.f * (b.u - a.u) / (b.f - a.f);
  };

  const double u_min = std::log(kMinSigma);
  const double u_max = std::log(kMaxSigma);
  // Bracketing: lo infeasible, hi feasible.
  auto first = evaluate(0.0);
  if (!first.ok()) return first.status();
  Point cur = *first;
  Point prev;
  bool have_prev = false;
  std::optional<Point> lo, hi;
  while (true) {
    (cur.feasible() ? hi : lo) = cur;
    if (lo && hi) break;
    if (cur.feasible() && cur.u <= u_min) return result(cur);
    if (!cur.feasible() && cur.u >= u_max) {
      return absl::OutOfRangeError(absl::StrCat(
          "calibration failure: budget (", budget.epsilon, ", ", budget.delta,
          ") unattainable for sigma <= ", kMaxSigma));
    }
    // Default: epsilon roughly proportional to 1/sigma, overshooting 10%.
    double step = std::isfinite(cur.f) ? 1.1 * cur.f : std::log(4.0);
    if (have_prev) {
      const double r = secant(prev, cur);
      if (std::isfinite(r)) step = 1.1 * (r - cur.u);
    }
    const double dir = cur.feasible() ? -1.0 : 1.0;
    step = dir * std::clamp(step * dir, std::log(1.05), std::log(16.0));
    prev = cur;
    have_prev = true;
    auto next = evaluate(std::clamp(cur.u + step, u_min, u_max));
    if (!next.ok()) return next.status();
    cur = *next;
  }
  // Refinement.
  bool last_was_hi = true;
  int stalls = 0;
  while (hi->f < -log_tol && hi->u - lo->u > kMinWidth) {
    const double width = hi->u - lo->u;
    double u = secant(*lo, *hi);
    // Nudge in log(sigma) worth about half the epsilon tolerance.
    double nudge = 0.45 * log_tol;
    if (std::isfinite(lo->f)) nudge /= std::max(1.0, (lo->f - hi->f) / width);
    if (!std::isfinite(u) || stalls >= 2) {
      u = 0.5 * (lo->u + hi->u);
      stalls = 0;
    } else {
      u += last_was_hi ? -nudge : nudge;
    }
    const double margin = std::min(nudge, 0.25 * width);
    u = std::clamp(u, lo->u + margin, hi->u - margin);
    auto pt = evaluate(u);
    if (!pt.ok()) return pt.status();
    last_was_hi = pt->feasible();
    (last_was_hi ? hi : lo) = *pt;
    if (hi->u - lo->u > 0.5 * width) ++stalls;
  }
  return result(*hi);
}

// Rule-of-thumb epsilon ~ B sqrt(T) / (sigma N). Only an order-of-magnitude
// guide: for the CheXpert recipe it gives ~1.1 where the accountant gives 8.
inline double EpsilonEstimate(int64_t batch, int64_t steps, double sigma,
                              int64_t dataset_size) {
  return static_cast<double>(batch) * std::sqrt(static_cast<double>(steps)) /
         (sigma * static_cast<double>(dataset_size));
}

}  // namespace dpforge::accountant

#endif  // DPFORGE_ACCOUNTANT_HPP_
