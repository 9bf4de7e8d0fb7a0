#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bmtm/math.hpp"
#include "bmtm/model.hpp"

namespace bmtm {

struct BaselineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kernel { epanechnikov, gaussian };

struct KdeConfig {
  double bandwidth = 10.0;
  Kernel kernel = Kernel::epanechnikov;
  double range_low = 40.0;
  double range_high = 60.0;

  void validate(double k) const {
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
    if (!(range_low < k) || !(k < range_high)) {
      throw ConfigError("range must bracket the threshold");
    }
  }
};

namespace detail {

inline double kernel_eval(Kernel k, double u) {
  if (k == Kernel::epanechnikov) {
    return std::fabs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
  }
  return std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
}

//! One-sided kernel moments M_l(t) = integral of u^l K(u) over u <= t.
inline void kernel_moments_to(Kernel k, double t, double& m0, double& m1,
                              double& m2) {
  if (k == Kernel::epanechnikov) {
    double c = std::clamp(t, -1.0, 1.0);
    m0 = 0.75 * (c - c * c * c / 3.0 + 2.0 / 3.0);
    m1 = 0.75 * (c * c / 2.0 - c * c * c * c / 4.0 - 0.25);
    m2 = 0.75 * (c * c * c / 3.0 - c * c * c * c * c / 5.0 + 2.0 / 15.0);
  } else if (!std::isfinite(t)) {
    m0 = t > 0.0 ? 1.0 : 0.0;
    m1 = 0.0;
    m2 = m0;
  } else {
    double phi = std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI);
    m0 = std_normal_cdf(t);
    m1 = -phi;
    m2 = m0 - t * phi;
  }
}

//! Whether the kernel support fits inside the scaled interval [c_lo, c_hi],
//! making the correction a no-op.
inline bool correction_inactive(Kernel k, double c_lo, double c_hi) {
  double reach = k == Kernel::epanechnikov ? 1.0 : 10.0;
  return c_hi >= reach && c_lo <= -reach;
}

//! Jones (1993) linear boundary kernel with support truncated to the data
//! interval [s_lo, s_hi]; removes the O(h) bias near either edge and
//! reduces to the plain estimate when neither edge is within reach.
inline double kde_corrected(const std::vector<double>& data, double eval_point,
                            double s_lo, double s_hi, const KdeConfig& cfg) {
  if (data.empty()) throw BaselineError("kde_boundary: empty data");
  if (!(cfg.bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
  double h = cfg.bandwidth;
  double n = static_cast<double>(data.size());
  double c_lo = (eval_point - s_hi) / h;
  double c_hi = (eval_point - s_lo) / h;

  double sum = 0.0;
  if (correction_inactive(cfg.kernel, c_lo, c_hi)) {
    for (double y : data) sum += kernel_eval(cfg.kernel, (eval_point - y) / h);
  } else {
    double l0, l1, l2, u0, u1, u2;
    kernel_moments_to(cfg.kernel, c_lo, l0, l1, l2);
    kernel_moments_to(cfg.kernel, c_hi, u0, u1, u2);
    double a0 = u0 - l0, a1 = u1 - l1, a2 = u2 - l2;
    double denom = a0 * a2 - a1 * a1;
    if (!(denom > 0.0)) {
      throw BaselineError("kde_boundary: degenerate boundary moments");
    }
    for (double y : data) {
      double u = (eval_point - y) / h;
      sum += (a2 - a1 * u) * kernel_eval(cfg.kernel, u) / denom;
    }
  }
  return sum / (n * h);
}

}  // namespace detail

//! Single-boundary KDE: `data` lies on one side of `boundary` (the side is
//! taken from the data) and the support is unbounded on the other side.
inline double kde_boundary(const std::vector<double>& data, double eval_point,
                           double boundary, const KdeConfig& cfg) {
  if (data.empty()) throw BaselineError("kde_boundary: empty data");
  std::size_t above = 0;
  for (double y : data) above += (y >= boundary) ? 1u : 0u;
  bool right_side = above * 2 >= data.size();
  double inf = std::numeric_limits<double>::infinity();
  return right_side ? detail::kde_corrected(data, eval_point, boundary, inf, cfg)
                    : detail::kde_corrected(data, eval_point, -inf, boundary, cfg);
}

namespace detail {

//! Simpson's rule over the corrected KDE on [lo, hi], with the density
//! support taken as [s_lo, s_hi]; returns (mass, first moment).
inline std::pair<double, double> kde_moments_on(const std::vector<double>& data,
                                                double lo, double hi,
                                                double s_lo, double s_hi,
                                                const KdeConfig& cfg,
                                                int intervals = 512) {
  double h = (hi - lo) / intervals;
  double mass = 0.0, first = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    double y = lo + i * h;
    double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    double p = kde_corrected(data, y, s_lo, s_hi, cfg);
    mass += w * p;
    first += w * y * p;
  }
  return {mass * h / 3.0, first * h / 3.0};
}

}  // namespace detail

//! Density-jump RDD on the Delta scale: the difference of the conditional
//! means implied by the one-sided boundary-corrected density estimates over
//! [K, K+a] and [K-a, K).
inline double rdd_estimate(const std::vector<double>& ys, double k,
                           const NeighborhoodSpec& nk, const KdeConfig& cfg) {
  cfg.validate(k);
  std::vector<double> left, right;
  for (double y : ys) {
    if (y < cfg.range_low || y > cfg.range_high) continue;
    (y < k ? left : right).push_back(y);
  }
  if (left.empty() || right.empty()) {
    throw BaselineError("rdd_estimate: need observations on both sides of K");
  }
  double rl = std::max(k - nk.half_width, cfg.range_low);
  double rh = std::min(k + nk.half_width, cfg.range_high);
  auto [mr, fr] = detail::kde_moments_on(right, k, rh, k, cfg.range_high, cfg);
  auto [ml, fl] = detail::kde_moments_on(left, rl, k, cfg.range_low, k, cfg);
  if (!(mr > 0.0) || !(ml > 0.0)) {
    throw BaselineError("rdd_estimate: one-sided density mass vanished");
  }
  return fr / mr - fl / ml;
}

inline double rdd_estimate(const std::vector<Observation>& obs, double k,
                           const NeighborhoodSpec& nk, const KdeConfig& cfg) {
  std::vector<double> ys;
  ys.reserve(obs.size());
  for (const auto& o : obs) ys.push_back(o.y);
  return rdd_estimate(ys, k, nk, cfg);
}

}  // namespace bmtm
