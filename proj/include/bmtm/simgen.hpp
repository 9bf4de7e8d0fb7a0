#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmtm/distributions.hpp"
#include "bmtm/estimands.hpp"
#include "bmtm/model.hpp"
#include "bmtm/rng.hpp"

namespace bmtm {

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Scenario { A, B, custom };

struct ScenarioConfig {
  Scenario scenario = Scenario::A;
  int n_groups = 100;
  std::vector<int> cluster_sizes{50, 100, 200, 300};
  double k = 50.0;
  double half_width = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_groups <= 0) throw ConfigError("n_groups must be positive");
    if (cluster_sizes.empty()) throw ConfigError("cluster_sizes must be nonempty");
    for (int n : cluster_sizes) {
      if (n <= 0) throw ConfigError("cluster sizes must be positive");
    }
    if (n_groups % static_cast<int>(cluster_sizes.size()) != 0) {
      throw ConfigError("n_groups must be divisible by the cluster count");
    }
    NeighborhoodSpec{k, half_width};  // validates 0 < half_width < k
  }

  //! Group g's sample size: groups are split equally into the clusters
  //! in order, cluster c taking groups [c*G/C, (c+1)*G/C).
  int group_size(int g) const {
    int per_cluster = n_groups / static_cast<int>(cluster_sizes.size());
    return cluster_sizes[static_cast<std::size_t>(g / per_cluster)];
  }
};

//! Population-level DGP parameters; group parameters are drawn around these.
struct Hyperparams {
  double mu_a, sigma_a;
  double mu_b, sigma_b;
  double mu_q, sigma_q;
  double mu_omega, sigma_omega;
  double mu_delta, sigma_delta;
  double mu_pi, sigma_pi;  // logit scale
};

inline Hyperparams draw_hyperparams(Scenario scenario, RngStream& rng) {
  if (scenario == Scenario::custom) {
    throw ConfigError("custom scenario takes explicit hyperparams");
  }
  Hyperparams h{};
  h.mu_a = rng.normal(3.5, 0.1);
  h.sigma_a = rng.halfnormal(0.2, 0.1);
  h.mu_b = rng.normal(39.0, 1.0);
  h.sigma_b = rng.halfnormal(2.0, 1.0);
  h.mu_q = rng.normal(1.5, 0.1);
  h.sigma_q = rng.halfnormal(0.2, 0.1);
  h.mu_omega = rng.normal(3.0, 0.1);
  h.sigma_omega = rng.halfnormal(0.5, 0.1);
  h.mu_delta = rng.normal(4.0, 0.1);
  h.sigma_delta = rng.halfnormal(0.5, 0.1);
  if (scenario == Scenario::A) {
    h.mu_pi = rng.normal(-2.0, 0.1);
    h.sigma_pi = rng.halfnormal(0.5, 0.1);
  } else {
    h.mu_pi = rng.normal(-4.0, 0.1);
    h.sigma_pi = rng.halfnormal(1.5, 0.1);
  }
  return h;
}

//! Per-group mixture parameters: (a,b,q) half-normal, (omega,delta) normal,
//! logit(pi) normal, beta fixed at the threshold.
inline std::vector<MixtureParams> draw_group_params(const Hyperparams& h, int G,
                                                    double k, RngStream& rng) {
  std::vector<MixtureParams> out;
  out.reserve(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) {
    double a = rng.halfnormal(h.mu_a, h.sigma_a);
    double b = rng.halfnormal(h.mu_b, h.sigma_b);
    double q = rng.halfnormal(h.mu_q, h.sigma_q);
    double omega = rng.normal(h.mu_omega, h.sigma_omega);
    while (omega <= 0.0) omega = rng.normal(h.mu_omega, h.sigma_omega);
    double delta = rng.normal(h.mu_delta, h.sigma_delta);
    double pi = inv_logit(rng.normal(h.mu_pi, h.sigma_pi));
    out.push_back({pi, SkewNormalParams(k, omega, delta),
                   SinghMaddalaParams(a, b, q)});
  }
  return out;
}

struct GroundTruth {
  std::vector<MixtureParams> params;       // per group
  std::vector<double> delta;               // per group, att(params[g], nk)
  std::vector<std::uint8_t> bunching;      // per observation, latent Z_i
  Hyperparams hyper{};
};

struct SimulatedData {
  std::vector<Observation> observations;
  GroundTruth truth;
  NeighborhoodSpec nk;
};

namespace detail {

//! Skew-normal draw rejection-truncated to the window. The acceptance
//! floor guards against a bunching density essentially outside N_K.
inline double truncated_sn_draw(const SkewNormalParams& gamma,
                                const NeighborhoodSpec& nk, RngStream& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    double y = sn_sample(gamma, rng, 1)[0];
    if (nk.contains(y)) return y;
  }
  throw GenerationError(
      "bunching rejection acceptance rate below 1e-4; density inconsistent "
      "with the neighborhood");
}

}  // namespace detail

inline SimulatedData generate_data(const std::vector<MixtureParams>& params,
                                   const std::vector<int>& sizes,
                                   const NeighborhoodSpec& nk, RngStream& rng) {
  if (params.size() != sizes.size()) {
    throw ConfigError("one sample size per group required");
  }
  SimulatedData out{{}, {}, nk};
  out.truth.params = params;
  for (std::size_t g = 0; g < params.size(); ++g) {
    try {
      out.truth.delta.push_back(att(params[g], nk));
    } catch (const EstimandError& e) {
      throw GenerationError(std::string("group ") + std::to_string(g) + ": " +
                            e.what());
    }
    for (int i = 0; i < sizes[g]; ++i) {
      bool z = rng.bernoulli(params[g].pi);
      double y = z ? detail::truncated_sn_draw(params[g].gamma, nk, rng)
                   : sm_sample(params[g].theta, rng, 1)[0];
      out.observations.push_back({y, static_cast<int>(g)});
      out.truth.bunching.push_back(z ? 1 : 0);
    }
  }
  return out;
}

inline SimulatedData simulate(const ScenarioConfig& cfg) {
  cfg.validate();
  RngStream rng(cfg.seed);
  Hyperparams h = draw_hyperparams(cfg.scenario, rng);
  auto params = draw_group_params(h, cfg.n_groups, cfg.k, rng);
  std::vector<int> sizes;
  for (int g = 0; g < cfg.n_groups; ++g) sizes.push_back(cfg.group_size(g));
  auto data = generate_data(params, sizes, NeighborhoodSpec{cfg.k, cfg.half_width}, rng);
  data.truth.hyper = h;
  return data;
}

}  // namespace bmtm
