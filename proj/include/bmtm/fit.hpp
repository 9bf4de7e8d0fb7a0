#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmtm/estimands.hpp"
#include "bmtm/model.hpp"
#include "bmtm/sampler.hpp"

namespace bmtm {

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitConfig {
  std::vector<NeighborhoodSpec> neighborhoods;
  PriorConfig priors = PriorConfig::simulation_defaults();
  SamplerConfig step1_sampler;
  SamplerConfig step2_sampler;
  bool fix_beta = true;
  PointEstimate point_estimate = PointEstimate::mean;
  double hdi_level = 0.9;
  bool keep_draws = true;

  void validate() const {
    if (neighborhoods.empty()) throw ConfigError("no neighborhoods given");
    validate_neighborhoods(neighborhoods);
    step1_sampler.validate();
    step2_sampler.validate();
    if (!(hdi_level > 0.0) || !(hdi_level < 1.0)) {
      throw ConfigError("hdi_level must be in (0, 1)");
    }
  }
};

//! Convergence summary over every parameter of one sampler run.
struct Diagnostics {
  double max_rhat = 1.0;
  double min_ess = 0.0;
  double divergence_rate = 0.0;

  bool warn() const { return max_rhat > 1.05 || divergence_rate > 0.10; }
};

inline Diagnostics diagnose(const PosteriorDraws& draws) {
  Diagnostics d;
  d.divergence_rate = draws.divergence_rate;
  d.min_ess = std::numeric_limits<double>::infinity();
  for (int p = 0; p < draws.dim(); ++p) {
    d.max_rhat = std::max(d.max_rhat, rhat(draws, p));
    d.min_ess = std::min(d.min_ess, ess(draws, p));
  }
  return d;
}

//! One (group, threshold) cell of a fit.
struct GroupThresholdEstimate {
  int group = 0;
  double threshold = 0.0;
  AttEstimate att;
  double pi_point = 0.0;
  SinghMaddalaParams theta_hat{1.0, 1.0, 1.0};
  Diagnostics step2_diag;
};

struct FitResult {
  std::vector<SinghMaddalaParams> theta_hat;         // per group
  std::vector<Diagnostics> step1_diag;               // per step-1 run
  std::vector<GroupThresholdEstimate> estimates;     // group-major
  // Kept only when keep_draws: one step-1 run per group (BMTM) or one total
  // (HBMTM); one step-2 run per estimate (BMTM) or per neighborhood (HBMTM).
  std::vector<PosteriorDraws> step1_draws;
  std::vector<PosteriorDraws> step2_draws;

  Diagnostics overall() const {
    Diagnostics d;
    d.min_ess = std::numeric_limits<double>::infinity();
    for (const auto& s : step1_diag) {
      d.max_rhat = std::max(d.max_rhat, s.max_rhat);
      d.min_ess = std::min(d.min_ess, s.min_ess);
      d.divergence_rate = std::max(d.divergence_rate, s.divergence_rate);
    }
    for (const auto& e : estimates) {
      d.max_rhat = std::max(d.max_rhat, e.step2_diag.max_rhat);
      d.min_ess = std::min(d.min_ess, e.step2_diag.min_ess);
      d.divergence_rate = std::max(d.divergence_rate, e.step2_diag.divergence_rate);
    }
    return d;
  }
};

namespace detail {

inline void check_partition(const PartitionedData& part, const FitConfig& cfg) {
  if (part.outside.empty()) {
    throw FitError("no observations outside the neighborhoods; step 1 "
                   "cannot identify the non-bunching distribution");
  }
  for (std::size_t m = 0; m < part.inside.size(); ++m) {
    if (part.inside[m].empty()) {
      throw FitError("neighborhood around " +
                     std::to_string(cfg.neighborhoods[m].k) +
                     " contains no observations");
    }
  }
}

inline double point_of(std::vector<double> draws, PointEstimate pe) {
  if (pe == PointEstimate::median) {
    std::sort(draws.begin(), draws.end());
    std::size_t n = draws.size();
    return n % 2 == 1 ? draws[n / 2]
                      : 0.5 * (draws[n / 2 - 1] + draws[n / 2]);
  }
  double s = 0.0;
  for (double d : draws) s += d;
  return s / static_cast<double>(draws.size());
}

}  // namespace detail

//! Two-step BMTM fitted independently per group: step 1 on the group's
//! outside data, step 2 per neighborhood on the group's inside data.
//! Sampler seeds derive from the configured seeds per group/neighborhood.
inline FitResult fit_bmtm(const std::vector<Observation>& data,
                          const FitConfig& cfg) {
  cfg.validate();
  auto nks = validate_neighborhoods(cfg.neighborhoods);
  auto part = partition(data, nks);
  detail::check_partition(part, cfg);
  const int G = part.n_groups;
  auto outside = by_group(part.outside, G);
  std::vector<std::vector<std::vector<Observation>>> inside;
  for (const auto& bucket : part.inside) inside.push_back(by_group(bucket, G));

  FitResult result;
  RngStream seed1(cfg.step1_sampler.seed), seed2(cfg.step2_sampler.seed);
  for (int g = 0; g < G; ++g) {
    if (outside[static_cast<std::size_t>(g)].empty()) {
      throw FitError("group " + std::to_string(g) +
                     " has no observations outside the neighborhoods");
    }
    Step1Model m1(outside[static_cast<std::size_t>(g)], nks, cfg.priors);
    SamplerConfig c1 = cfg.step1_sampler;
    c1.seed = seed1.derive(static_cast<std::uint64_t>(g)).seed();
    auto d1 = run_chains(m1, c1);
    SinghMaddalaParams theta_hat(posterior_mean(d1, "a"),
                                 posterior_mean(d1, "b"),
                                 posterior_mean(d1, "q"));
    result.theta_hat.push_back(theta_hat);
    result.step1_diag.push_back(diagnose(d1));
    if (cfg.keep_draws) result.step1_draws.push_back(d1);

    for (std::size_t m = 0; m < nks.size(); ++m) {
      Step2Model m2(inside[m][static_cast<std::size_t>(g)], nks[m], theta_hat,
                    cfg.priors, cfg.fix_beta);
      SamplerConfig c2 = cfg.step2_sampler;
      c2.seed = seed2
                    .derive(static_cast<std::uint64_t>(g) * nks.size() + m)
                    .seed();
      auto d2 = run_chains(m2, c2);
      auto deltas = posterior_att(d2, theta_hat, nks[m], cfg.fix_beta);
      GroupThresholdEstimate est;
      est.group = g;
      est.threshold = nks[m].k;
      est.att = summarize_att(deltas, cfg.hdi_level, cfg.point_estimate);
      est.pi_point = detail::point_of(d2.pooled(d2.param_index("pi")),
                                      cfg.point_estimate);
      est.theta_hat = theta_hat;
      est.step2_diag = diagnose(d2);
      result.estimates.push_back(est);
      if (cfg.keep_draws) result.step2_draws.push_back(d2);
    }
  }
  return result;
}

//! Two-step HBMTM: one hierarchical step-1 fit over all groups on the union
//! complement, then one hierarchical step-2 fit per neighborhood.
inline FitResult fit_hbmtm(const std::vector<Observation>& data,
                           const FitConfig& cfg) {
  cfg.validate();
  auto nks = validate_neighborhoods(cfg.neighborhoods);
  auto part = partition(data, nks);
  detail::check_partition(part, cfg);
  const int G = part.n_groups;
  auto outside = by_group(part.outside, G);

  FitResult result;
  HierStep1Model m1(outside, nks, cfg.priors);
  auto d1 = run_chains(m1, cfg.step1_sampler);
  for (int g = 0; g < G; ++g) {
    auto s = std::to_string(g);
    result.theta_hat.emplace_back(posterior_mean(d1, "a[" + s + "]"),
                                  posterior_mean(d1, "b[" + s + "]"),
                                  posterior_mean(d1, "q[" + s + "]"));
  }
  result.step1_diag.push_back(diagnose(d1));
  if (cfg.keep_draws) result.step1_draws.push_back(d1);

  RngStream seed2(cfg.step2_sampler.seed);
  for (std::size_t m = 0; m < nks.size(); ++m) {
    auto inside = by_group(part.inside[m], G);
    HierStep2Model m2(inside, nks[m], result.theta_hat, cfg.priors,
                      cfg.fix_beta);
    SamplerConfig c2 = cfg.step2_sampler;
    c2.seed = seed2.derive(m).seed();
    auto d2 = run_chains(m2, c2);
    Diagnostics diag = diagnose(d2);
    for (int g = 0; g < G; ++g) {
      auto s = std::to_string(g);
      // per-group draws of (omega_g, delta_g[, beta_g]) -> delta draws
      int iw = d2.param_index("omega[" + s + "]");
      int id = d2.param_index("delta[" + s + "]");
      int ib = cfg.fix_beta ? -1 : d2.param_index("beta[" + s + "]");
      std::vector<double> deltas;
      deltas.reserve(static_cast<std::size_t>(d2.n_chains) *
                     static_cast<std::size_t>(d2.n_samples));
      std::size_t failures = 0;
      for (int c = 0; c < d2.n_chains; ++c) {
        for (int sdx = 0; sdx < d2.n_samples; ++sdx) {
          double beta = cfg.fix_beta ? nks[m].k : d2.at(c, sdx, ib);
          try {
            SkewNormalParams gamma(beta, d2.at(c, sdx, iw), d2.at(c, sdx, id));
            deltas.push_back(
                att(gamma, result.theta_hat[static_cast<std::size_t>(g)], nks[m]));
          } catch (const std::exception&) {
            ++failures;
          }
        }
      }
      if (failures * 100 > deltas.size() + failures) {
        throw EstimandError("posterior_att: more than 1% of draws failed");
      }
      GroupThresholdEstimate est;
      est.group = g;
      est.threshold = nks[m].k;
      est.att = summarize_att(deltas, cfg.hdi_level, cfg.point_estimate);
      est.pi_point = detail::point_of(d2.pooled(d2.param_index("pi[" + s + "]")),
                                      cfg.point_estimate);
      est.theta_hat = result.theta_hat[static_cast<std::size_t>(g)];
      est.step2_diag = diag;
      result.estimates.push_back(est);
    }
    if (cfg.keep_draws) result.step2_draws.push_back(d2);
  }
  // group-major ordering, matching fit_bmtm
  std::stable_sort(result.estimates.begin(), result.estimates.end(),
                   [](const auto& a, const auto& b) {
                     return a.group != b.group ? a.group < b.group
                                               : a.threshold < b.threshold;
                   });
  return result;
}

}  // namespace bmtm
