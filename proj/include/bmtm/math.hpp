#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace bmtm {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
inline constexpr double kLogTwo = 0.6931471805599453094172321214582;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_std_normal_pdf(double z) {
  return -0.5 * (kLogTwoPi + z * z);
}

inline double std_normal_pdf(double z) { return std::exp(log_std_normal_pdf(z)); }

//! Standard normal CDF via erfc; absolute error well below 1e-12.
inline double std_normal_cdf(double z) {
  return 0.5 * std::erfc(-z * M_SQRT1_2);
}

//! log Phi(z) with an asymptotic-series tail for z << 0 where erfc underflows.
inline double log_std_normal_cdf(double z) {
  if (z > -20.0) {
    double p = std_normal_cdf(z);
    if (p > 1e-300) return std::log(p);
  }
  // Phi(z) ~ phi(z)/(-z) * (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8), z -> -inf
  double z2 = z * z;
  double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) +
                  105.0 / (z2 * z2 * z2 * z2);
  return log_std_normal_pdf(z) - std::log(-z) + std::log(series);
}

//! Inverse Mills ratio phi(z)/Phi(z); stable in both tails.
inline double mills_ratio_inv(double z) {
  return std::exp(log_std_normal_pdf(z) - log_std_normal_cdf(z));
}

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = a > b ? a : b;
  return m + std::log1p(std::exp(-(std::fabs(a - b))));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double inv_logit(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double normal_logpdf(double x, double mu, double sd) {
  double z = (x - mu) / sd;
  return -std::log(sd) - 0.5 * (kLogTwoPi + z * z);
}

}  // namespace bmtm
