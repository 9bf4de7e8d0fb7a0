#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "bmtm/math.hpp"
#include "bmtm/rng.hpp"

namespace bmtm {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

//! Singh-Maddala (Burr XII) parameters: shapes a, q and scale b, all > 0.
struct SinghMaddalaParams {
  double a;
  double b;
  double q;

  SinghMaddalaParams(double a_, double b_, double q_) : a(a_), b(b_), q(q_) {
    if (!(a > 0.0) || !(b > 0.0) || !(q > 0.0) || !std::isfinite(a) ||
        !std::isfinite(b) || !std::isfinite(q)) {
      throw DomainError("SinghMaddalaParams: a, b, q must be positive finite");
    }
  }
};

//! Skew-normal parameters: location beta, scale omega > 0, shape delta.
struct SkewNormalParams {
  double beta;
  double omega;
  double delta;

  SkewNormalParams(double beta_, double omega_, double delta_)
      : beta(beta_), omega(omega_), delta(delta_) {
    if (!(omega > 0.0) || !std::isfinite(beta) || !std::isfinite(omega) ||
        !std::isfinite(delta)) {
      throw DomainError("SkewNormalParams: omega must be positive finite");
    }
  }
};

// ---------------------------------------------------------------------------
// Singh-Maddala

inline double sm_logpdf(double y, const SinghMaddalaParams& p) {
  if (!(y > 0.0)) {
    if (y == 0.0 && p.a > 1.0) return kNegInf;
    throw DomainError("sm_logpdf: y must be > 0");
  }
  double lyb = std::log(y / p.b);
  double t = std::exp(p.a * lyb);  // (y/b)^a
  return std::log(p.a) + std::log(p.q) + (p.a - 1.0) * std::log(y) -
         p.a * std::log(p.b) - (p.q + 1.0) * std::log1p(t);
}

inline double sm_cdf(double y, const SinghMaddalaParams& p) {
  if (y < 0.0) throw DomainError("sm_cdf: y must be >= 0");
  if (y == 0.0) return 0.0;
  double t = std::exp(p.a * std::log(y / p.b));
  return -std::expm1(-p.q * std::log1p(t));
}

//! Survival 1 - CDF, kept separate to avoid cancellation in the far tail.
inline double sm_survival(double y, const SinghMaddalaParams& p) {
  if (y < 0.0) throw DomainError("sm_survival: y must be >= 0");
  if (y == 0.0) return 1.0;
  double t = std::exp(p.a * std::log(y / p.b));
  return std::exp(-p.q * std::log1p(t));
}

inline double sm_quantile(double u, const SinghMaddalaParams& p) {
  if (!(u >= 0.0) || u >= 1.0) throw DomainError("sm_quantile: u must be in [0, 1)");
  if (u == 0.0) return 0.0;
  // b * ((1-u)^(-1/q) - 1)^(1/a)
  double inner = std::expm1(-std::log1p(-u) / p.q);
  return p.b * std::exp(std::log(inner) / p.a);
}

inline std::vector<double> sm_sample(const SinghMaddalaParams& p, RngStream& rng,
                                     std::size_t n) {
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sm_quantile(rng.uniform(), p));
  return out;
}

//! d/d(a,b,q) of sm_logpdf.
inline std::array<double, 3> sm_grad_logpdf(double y, const SinghMaddalaParams& p) {
  if (!(y > 0.0)) throw DomainError("sm_grad_logpdf: y must be > 0");
  double u = std::log(y / p.b);
  double t = std::exp(p.a * u);
  double r = t / (1.0 + t);
  return {1.0 / p.a + u - (p.q + 1.0) * u * r,
          -p.a / p.b + (p.q + 1.0) * p.a * r / p.b,
          1.0 / p.q - std::log1p(t)};
}

//! d/d(a,b,q) of the survival function S(y) = (1 + (y/b)^a)^(-q).
inline std::array<double, 3> sm_grad_survival(double y, const SinghMaddalaParams& p) {
  if (y <= 0.0) return {0.0, 0.0, 0.0};
  double u = std::log(y / p.b);
  double t = std::exp(p.a * u);
  double s = std::exp(-p.q * std::log1p(t));
  double r = t / (1.0 + t);
  return {-s * p.q * u * r, s * p.q * p.a * r / p.b, -s * std::log1p(t)};
}

// ---------------------------------------------------------------------------
// Skew-normal

inline double sn_logpdf(double y, const SkewNormalParams& p) {
  double z = (y - p.beta) / p.omega;
  return kLogTwo - std::log(p.omega) + log_std_normal_pdf(z) +
         log_std_normal_cdf(p.delta * z);
}

//! d/d(beta, omega, delta) of sn_logpdf.
inline std::array<double, 3> sn_grad_logpdf(double y, const SkewNormalParams& p) {
  double z = (y - p.beta) / p.omega;
  double m = mills_ratio_inv(p.delta * z);  // phi/Phi at delta*z
  return {z / p.omega - p.delta * m / p.omega,
          -1.0 / p.omega + z * z / p.omega - p.delta * z * m / p.omega,
          z * m};
}

inline std::vector<double> sn_sample(const SkewNormalParams& p, RngStream& rng,
                                     std::size_t n) {
  // two-normal representation: X = beta + omega*(d*|Z0| + sqrt(1-d^2)*Z1),
  // d = delta / sqrt(1 + delta^2)
  double d = p.delta / std::sqrt(1.0 + p.delta * p.delta);
  double s = std::sqrt(1.0 - d * d);
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z0 = rng.normal();
    double z1 = rng.normal();
    out.push_back(p.beta + p.omega * (d * std::fabs(z0) + s * z1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Half-normal and logit-normal (prior building blocks)

inline double halfnormal_logpdf(double x, double sd) {
  if (x < 0.0) throw DomainError("halfnormal_logpdf: x must be >= 0");
  if (!(sd > 0.0)) throw DomainError("halfnormal_logpdf: sd must be > 0");
  double z = x / sd;
  return kLogTwo - std::log(sd) - 0.5 * (kLogTwoPi + z * z);
}

//! Half-normal with location mu: normal(mu, sd) truncated to x > 0.
inline double truncnormal_logpdf(double x, double mu, double sd) {
  if (x < 0.0) throw DomainError("truncnormal_logpdf: x must be >= 0");
  if (!(sd > 0.0)) throw DomainError("truncnormal_logpdf: sd must be > 0");
  double z = (x - mu) / sd;
  double log_mass = log_std_normal_cdf(mu / sd);  // P(X > 0)
  return -std::log(sd) - 0.5 * (kLogTwoPi + z * z) - log_mass;
}

inline double logitnormal_logpdf(double p, double mu, double sigma) {
  if (!(p > 0.0) || !(p < 1.0))
    throw DomainError("logitnormal_logpdf: p must be in (0, 1)");
  if (!(sigma > 0.0)) throw DomainError("logitnormal_logpdf: sigma must be > 0");
  double x = logit(p);
  double z = (x - mu) / sigma;
  return -std::log(sigma) - 0.5 * (kLogTwoPi + z * z) - std::log(p) -
         std::log1p(-p);
}

// ---------------------------------------------------------------------------
// Family dispatch for gradient consumers

enum class Family { singh_maddala, skew_normal };

inline std::array<double, 3> grad_logpdf(Family family, double y,
                                         const SinghMaddalaParams* sm,
                                         const SkewNormalParams* sn) {
  switch (family) {
    case Family::singh_maddala:
      return sm_grad_logpdf(y, *sm);
    case Family::skew_normal:
      return sn_grad_logpdf(y, *sn);
  }
  throw DomainError("grad_logpdf: unknown family");
}

}  // namespace bmtm
