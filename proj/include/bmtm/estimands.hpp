#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "bmtm/distributions.hpp"
#include "bmtm/model.hpp"
#include "bmtm/quadrature.hpp"
#include "bmtm/sampler.hpp"

namespace bmtm {

struct EstimandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! ATT point estimate with an HDI, plus the underlying draws.
struct AttEstimate {
  double point = 0.0;
  double hdi_low = 0.0;
  double hdi_high = 0.0;
  double level = 0.9;
  std::vector<double> draws;
};

//! Difference of truncated means over N_K: bunching minus non-bunching.
//! Depends on gamma, theta, and the window only (not on pi).
inline double att(const SkewNormalParams& gamma, const SinghMaddalaParams& theta,
                  const NeighborhoodSpec& nk, double rel_tol = 1e-9) {
  auto f = [&](double y) { return std::exp(sn_logpdf(y, gamma)); };
  auto yf = [&](double y) { return y * std::exp(sn_logpdf(y, gamma)); };
  auto g = [&](double y) { return std::exp(sm_logpdf(y, theta)); };
  auto yg = [&](double y) { return y * std::exp(sm_logpdf(y, theta)); };

  double lo = nk.lo(), hi = nk.hi();
  double mf = integrate(f, lo, hi, rel_tol, 1e-300).value;
  double mg = integrate(g, lo, hi, rel_tol, 1e-300).value;
  if (!(mf > 1e-300)) {
    throw EstimandError("att: bunching component has no mass in the window");
  }
  if (!(mg > 1e-300)) {
    throw EstimandError("att: non-bunching component has no mass in the window");
  }
  double ef = integrate(yf, lo, hi, rel_tol, 1e-300).value / mf;
  double eg = integrate(yg, lo, hi, rel_tol, 1e-300).value / mg;
  return ef - eg;
}

inline double att(const MixtureParams& psi, const NeighborhoodSpec& nk,
                  double rel_tol = 1e-9) {
  return att(psi.gamma, psi.theta, nk, rel_tol);
}

//! Maps step-2 posterior draws to ATT draws. The draws must come from a
//! Step2Model (columns pi, [beta,] omega, delta); theta is the frozen
//! step-1 posterior mean. Throws if more than 1% of draws fail.
inline std::vector<double> posterior_att(const PosteriorDraws& draws,
                                         const SinghMaddalaParams& theta_hat,
                                         const NeighborhoodSpec& nk,
                                         bool fix_beta = true) {
  int ib = fix_beta ? -1 : draws.param_index("beta");
  int iw = draws.param_index("omega");
  int id = draws.param_index("delta");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(draws.n_chains) *
              static_cast<std::size_t>(draws.n_samples));
  std::size_t failures = 0;
  for (int c = 0; c < draws.n_chains; ++c) {
    for (int s = 0; s < draws.n_samples; ++s) {
      double beta = fix_beta ? nk.k : draws.at(c, s, ib);
      try {
        SkewNormalParams gamma(beta, draws.at(c, s, iw), draws.at(c, s, id));
        out.push_back(att(gamma, theta_hat, nk));
      } catch (const std::exception&) {
        ++failures;
        out.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
  }
  if (failures * 100 > out.size()) {
    throw EstimandError("posterior_att: more than 1% of draws failed");
  }
  // drop the rare failed draws
  if (failures > 0) {
    out.erase(std::remove_if(out.begin(), out.end(),
                             [](double v) { return std::isnan(v); }),
              out.end());
  }
  return out;
}

//! Shortest contiguous interval containing ceil(level * n) sorted samples.
//! Assumes a unimodal sample; ties broken by the leftmost window.
inline std::pair<double, double> hdi(std::vector<double> samples, double level) {
  if (samples.size() < 10) throw EstimandError("hdi: need at least 10 samples");
  if (!(level > 0.0) || !(level < 1.0)) {
    throw EstimandError("hdi: level must be in (0, 1)");
  }
  std::sort(samples.begin(), samples.end());
  std::size_t n = samples.size();
  auto k = static_cast<std::size_t>(
      std::ceil(level * static_cast<double>(n)));
  k = std::min(std::max<std::size_t>(k, 1), n);
  std::size_t best = 0;
  double best_width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + k <= n; ++i) {
    double width = samples[i + k - 1] - samples[i];
    if (width < best_width) {
      best_width = width;
      best = i;
    }
  }
  return {samples[best], samples[best + k - 1]};
}

enum class PointEstimate { mean, median };

inline AttEstimate summarize_att(std::vector<double> delta_draws, double level,
                                 PointEstimate pe = PointEstimate::mean) {
  AttEstimate est;
  est.level = level;
  est.draws = delta_draws;
  if (pe == PointEstimate::mean) {
    double s = 0.0;
    for (double d : delta_draws) s += d;
    est.point = s / static_cast<double>(delta_draws.size());
  } else {
    std::sort(delta_draws.begin(), delta_draws.end());
    std::size_t n = delta_draws.size();
    est.point = (n % 2 == 1) ? delta_draws[n / 2]
                             : 0.5 * (delta_draws[n / 2 - 1] + delta_draws[n / 2]);
  }
  auto [lo, hi] = hdi(est.draws, level);
  est.hdi_low = lo;
  est.hdi_high = hi;
  return est;
}

//! Bunching density at both window endpoints per posterior draw, the data
//! behind the containment diagnostic.
struct EndpointDensity {
  double at_lower;
  double at_upper;
};

inline std::vector<EndpointDensity> endpoint_density(
    const PosteriorDraws& draws, const NeighborhoodSpec& nk,
    bool fix_beta = true) {
  int ib = fix_beta ? -1 : draws.param_index("beta");
  int iw = draws.param_index("omega");
  int id = draws.param_index("delta");
  std::vector<EndpointDensity> out;
  out.reserve(static_cast<std::size_t>(draws.n_chains) *
              static_cast<std::size_t>(draws.n_samples));
  for (int c = 0; c < draws.n_chains; ++c) {
    for (int s = 0; s < draws.n_samples; ++s) {
      double beta = fix_beta ? nk.k : draws.at(c, s, ib);
      SkewNormalParams gamma(beta, draws.at(c, s, iw), draws.at(c, s, id));
      out.push_back({std::exp(sn_logpdf(nk.lo(), gamma)),
                     std::exp(sn_logpdf(nk.hi(), gamma))});
    }
  }
  return out;
}

}  // namespace bmtm
