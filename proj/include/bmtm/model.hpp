#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmtm/distributions.hpp"
#include "bmtm/math.hpp"
#include "bmtm/quadrature.hpp"
#include "bmtm/rng.hpp"

namespace bmtm {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Bunching window N_K = [k - half_width, k + half_width].
struct NeighborhoodSpec {
  double k;
  double half_width;

  NeighborhoodSpec(double k_, double a_) : k(k_), half_width(a_) {
    if (!(a_ > 0.0) || !(a_ < k_)) {
      throw ConfigError("NeighborhoodSpec: need 0 < half_width < k");
    }
  }
  double lo() const { return k - half_width; }
  double hi() const { return k + half_width; }
  bool contains(double y) const { return y >= lo() && y <= hi(); }
};

//! Checks disjointness and sorts; throws on overlap.
inline std::vector<NeighborhoodSpec> validate_neighborhoods(
    std::vector<NeighborhoodSpec> nks) {
  std::sort(nks.begin(), nks.end(),
            [](const auto& a, const auto& b) { return a.k < b.k; });
  for (std::size_t i = 1; i < nks.size(); ++i) {
    // touching endpoints are allowed (adjacent windows); interiors must not meet
    if (nks[i].lo() < nks[i - 1].hi()) {
      throw ConfigError("neighborhoods overlap");
    }
  }
  return nks;
}

struct Observation {
  double y;
  int group = 0;
  bool operator==(const Observation&) const = default;
};

struct PartitionedData {
  std::vector<std::vector<Observation>> inside;  // one bucket per neighborhood
  std::vector<Observation> outside;
  int n_groups = 1;

  std::size_t total() const {
    std::size_t n = outside.size();
    for (const auto& b : inside) n += b.size();
    return n;
  }
};

//! Splits observations into per-neighborhood inside buckets and the outside
//! complement. Boundary points count as inside.
inline PartitionedData partition(const std::vector<Observation>& data,
                                 const std::vector<NeighborhoodSpec>& nks_in) {
  auto nks = validate_neighborhoods(nks_in);
  PartitionedData out;
  out.inside.resize(nks.size());
  int max_group = 0;
  for (const auto& obs : data) {
    max_group = std::max(max_group, obs.group);
    bool placed = false;
    for (std::size_t m = 0; m < nks.size(); ++m) {
      if (nks[m].contains(obs.y)) {
        out.inside[m].push_back(obs);
        placed = true;
        break;
      }
    }
    if (!placed) out.outside.push_back(obs);
  }
  out.n_groups = max_group + 1;
  return out;
}

//! Full mixture parameter set for one group.
struct MixtureParams {
  double pi;
  SkewNormalParams gamma;
  SinghMaddalaParams theta;

  MixtureParams(double pi_, SkewNormalParams g, SinghMaddalaParams t)
      : pi(pi_), gamma(g), theta(t) {
    if (!(pi >= 0.0) || !(pi <= 1.0)) {
      throw DomainError("MixtureParams: pi must be in [0, 1]");
    }
  }
};

inline double mixture_logpdf(double y, const MixtureParams& psi) {
  double a = std::log(psi.pi) + sn_logpdf(y, psi.gamma);
  double b = std::log1p(-psi.pi) + sm_logpdf(y, psi.theta);
  return log_sum_exp(a, b);
}

//! Bunching-component mass F(gamma) = integral of f over N_K and its
//! gradient with respect to (beta, omega, delta). Uses a fixed Kronrod rule
//! so the gradient is the exact derivative of the computed value.
inline void sn_window_mass_grad(const SkewNormalParams& gamma,
                                const NeighborhoodSpec& nk, double& mass,
                                std::array<double, 3>& grad) {
  constexpr int kPanels = 16;
  mass = 0.0;
  grad = {0.0, 0.0, 0.0};
  double lo = nk.lo();
  double w = (nk.hi() - lo) / kPanels;
  for (int p = 0; p < kPanels; ++p) {
    double c = lo + (static_cast<double>(p) + 0.5) * w;
    double h = 0.5 * w;
    for (std::size_t i = 0; i < 8; ++i) {
      double x = detail::kKronrodNodes[i];
      double wt = detail::kKronrodWeights[i] * h;
      for (double y : {c - h * x, c + h * x}) {
        double f = std::exp(sn_logpdf(y, gamma));
        auto g = sn_grad_logpdf(y, gamma);
        mass += wt * f;
        for (int j = 0; j < 3; ++j) grad[static_cast<std::size_t>(j)] += wt * f * g[static_cast<std::size_t>(j)];
        if (i == 7) break;  // center node enters once
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Adjusted (truncation-corrected) Singh-Maddala likelihood

//! Probability of the complement of the union of neighborhoods,
//! Z(theta) = 1 - sum_m [G(hi_m) - G(lo_m)].
inline double sm_outside_mass(const SinghMaddalaParams& theta,
                              const std::vector<NeighborhoodSpec>& nks) {
  double z = 1.0;
  for (const auto& nk : nks) {
    z -= sm_survival(nk.lo(), theta) - sm_survival(nk.hi(), theta);
  }
  return z;
}

inline std::array<double, 3> sm_outside_mass_grad(
    const SinghMaddalaParams& theta, const std::vector<NeighborhoodSpec>& nks) {
  std::array<double, 3> g{0.0, 0.0, 0.0};
  for (const auto& nk : nks) {
    auto glo = sm_grad_survival(nk.lo(), theta);
    auto ghi = sm_grad_survival(nk.hi(), theta);
    for (int i = 0; i < 3; ++i) g[i] -= glo[i] - ghi[i];
  }
  return g;
}

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Log-likelihood of outside observations under the truncation-adjusted
//! Singh-Maddala model. Throws EvalError when the outside mass is not
//! positive (pathological parameters).
inline double adjusted_loglik(const SinghMaddalaParams& theta,
                              std::span<const Observation> outside,
                              const std::vector<NeighborhoodSpec>& nks) {
  double z = sm_outside_mass(theta, nks);
  if (!(z > 0.0)) throw EvalError("adjusted_loglik: outside mass <= 0");
  double ll = 0.0;
  for (const auto& obs : outside) ll += sm_logpdf(obs.y, theta);
  return ll - static_cast<double>(outside.size()) * std::log(z);
}

// ---------------------------------------------------------------------------
// Prior configuration (Appendix-style normal / half-normal blocks)

struct NormalPrior {
  double mean;
  double sd;
  double logpdf(double x) const { return normal_logpdf(x, mean, sd); }
  double dlogpdf(double x) const { return -(x - mean) / (sd * sd); }
};

//! Normal(loc, sd^2) truncated to (0, inf); loc may be nonzero.
struct HalfNormalPrior {
  double loc;
  double sd;
  double logpdf(double x) const { return truncnormal_logpdf(x, loc, sd); }
  double dlogpdf(double x) const { return -(x - loc) / (sd * sd); }
};

enum class PriorMode { simulation_default, application_default, custom };

struct PriorConfig {
  PriorMode mode = PriorMode::simulation_default;

  // BMTM step 1 (priors on log a, log b, log q)
  NormalPrior log_a{0.0, 1.5};
  NormalPrior log_b{0.0, 1.5};
  NormalPrior log_q{std::log(40.0), 1.0};

  // BMTM step 2 (omega prior is on omega itself, positive-constrained)
  NormalPrior omega{0.0, 10.0};
  NormalPrior delta{0.0, 2.0};
  NormalPrior logit_pi{0.0, 1.5};
  NormalPrior beta_free{0.0, 1000.0};  // mean overridden to K at build time

  // HBMTM step 1 hyperpriors
  NormalPrior mu_a{0.0, 2.5};
  NormalPrior mu_b{3.0, 2.0};
  NormalPrior mu_q{0.0, 2.5};
  HalfNormalPrior sigma_a{0.0, 1.0};
  HalfNormalPrior sigma_b{0.0, 1.0};
  HalfNormalPrior sigma_q{0.0, 1.0};

  // HBMTM step 2 hyperpriors
  NormalPrior mu_pi{0.0, 1.5};
  NormalPrior mu_omega{2.0, 1.0};
  NormalPrior mu_delta{0.0, 1.0};
  HalfNormalPrior sigma_pi{0.0, 1.0};
  HalfNormalPrior sigma_omega{0.0, 1.0};
  HalfNormalPrior sigma_delta{0.0, 1.0};
  HalfNormalPrior sigma_beta{0.0, 1000.0};  // only used in free-beta mode

  static PriorConfig simulation_defaults() { return PriorConfig{}; }

  static PriorConfig application_defaults() {
    PriorConfig p;
    p.mode = PriorMode::application_default;
    p.mu_a = {1.0, 1.0};
    p.mu_b = {10.0, 2.0};
    p.mu_q = {0.0, 1.0};
    p.sigma_a = {0.5, 1.0};
    p.sigma_b = {10.0, 2.0};
    p.sigma_q = {0.0, 1.0};
    p.mu_pi = {2.0, 1.0};
    p.mu_omega = {7.0, 0.5};
    p.mu_delta = {0.0, 1.0};
    p.sigma_pi = {0.0, 0.5};
    p.sigma_omega = {0.0, 1.0};
    p.sigma_delta = {0.0, 0.5};
    return p;
  }
};

// ---------------------------------------------------------------------------
// Posterior objectives on unconstrained space

//! Value + gradient of a log target density over R^n, plus the bijection to
//! constrained space. Non-finite evaluations return -inf with zero gradient.
class PosteriorModel {
public:
  virtual ~PosteriorModel() = default;
  virtual int dim() const = 0;
  virtual double value_grad(std::span<const double> x,
                            std::span<double> grad) const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  //! Unconstrained -> constrained (same length as param_names()).
  virtual std::vector<double> constrain(std::span<const double> x) const = 0;
  //! Overdispersed chain start: prior draw pushed through the
  //! unconstraining transform, plus U(-1, 1) jitter per coordinate.
  virtual std::vector<double> initial_point(RngStream& rng) const = 0;

protected:
  static double reject(std::span<double> grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return kNegInf;
  }
};

//! Step 1: posterior of theta = (a, b, q) on log scale given outside data.
class Step1Model final : public PosteriorModel {
public:
  Step1Model(std::vector<Observation> outside, std::vector<NeighborhoodSpec> nks,
             PriorConfig priors)
      : outside_(std::move(outside)),
        nks_(validate_neighborhoods(std::move(nks))),
        priors_(priors) {}

  int dim() const override { return 3; }

  std::vector<std::string> param_names() const override { return {"a", "b", "q"}; }

  std::vector<double> constrain(std::span<const double> x) const override {
    return {std::exp(x[0]), std::exp(x[1]), std::exp(x[2])};
  }

  std::vector<double> initial_point(RngStream& rng) const override {
    return {priors_.log_a.mean + priors_.log_a.sd * rng.normal() + rng.uniform(-1, 1),
            priors_.log_b.mean + priors_.log_b.sd * rng.normal() + rng.uniform(-1, 1),
            priors_.log_q.mean + priors_.log_q.sd * rng.normal() + rng.uniform(-1, 1)};
  }

  double value_grad(std::span<const double> x,
                    std::span<double> grad) const override {
    double la = x[0], lb = x[1], lq = x[2];
    if (!std::isfinite(la) || !std::isfinite(lb) || !std::isfinite(lq) ||
        std::max({la, lb, lq}) > 300.0) {
      return reject(grad);
    }
    double v = priors_.log_a.logpdf(la) + priors_.log_b.logpdf(lb) +
               priors_.log_q.logpdf(lq);
    grad[0] = priors_.log_a.dlogpdf(la);
    grad[1] = priors_.log_b.dlogpdf(lb);
    grad[2] = priors_.log_q.dlogpdf(lq);
    try {
      SinghMaddalaParams theta(std::exp(la), std::exp(lb), std::exp(lq));
      double z = sm_outside_mass(theta, nks_);
      if (!(z > 0.0)) return reject(grad);
      double n = static_cast<double>(outside_.size());
      double ll = -n * std::log(z);
      std::array<double, 3> gl{0.0, 0.0, 0.0};
      auto gz = sm_outside_mass_grad(theta, nks_);
      for (int i = 0; i < 3; ++i) gl[i] = -n * gz[i] / z;
      for (const auto& obs : outside_) {
        ll += sm_logpdf(obs.y, theta);
        auto g = sm_grad_logpdf(obs.y, theta);
        for (int i = 0; i < 3; ++i) gl[i] += g[i];
      }
      if (!std::isfinite(ll)) return reject(grad);
      v += ll;
      // chain rule through exp
      grad[0] += gl[0] * theta.a;
      grad[1] += gl[1] * theta.b;
      grad[2] += gl[2] * theta.q;
    } catch (const DomainError&) {
      return reject(grad);
    }
    if (!std::isfinite(v)) return reject(grad);
    return v;
  }

private:
  std::vector<Observation> outside_;
  std::vector<NeighborhoodSpec> nks_;
  PriorConfig priors_;
};

//! Step 2: posterior of (pi, gamma) for one neighborhood, theta fixed at its
//! step-1 posterior mean. Parameter vector is (logit pi, [beta,] log omega,
//! delta); beta is excluded when fixed at K.
class Step2Model final : public PosteriorModel {
public:
  Step2Model(std::vector<Observation> inside, NeighborhoodSpec nk,
             SinghMaddalaParams theta_hat, PriorConfig priors,
             bool fix_beta = true)
      : inside_(std::move(inside)),
        nk_(nk),
        theta_hat_(theta_hat),
        priors_(priors),
        fix_beta_(fix_beta) {
    priors_.beta_free.mean = nk_.k;
    theta_window_mass_ = sm_cdf(nk_.hi(), theta_hat_) - sm_cdf(nk_.lo(), theta_hat_);
  }

  int dim() const override { return fix_beta_ ? 3 : 4; }

  std::vector<std::string> param_names() const override {
    if (fix_beta_) return {"pi", "omega", "delta"};
    return {"pi", "beta", "omega", "delta"};
  }

  std::vector<double> constrain(std::span<const double> x) const override {
    if (fix_beta_) return {inv_logit(x[0]), std::exp(x[1]), x[2]};
    return {inv_logit(x[0]), x[1], std::exp(x[2]), x[3]};
  }

  SkewNormalParams gamma_of(std::span<const double> x) const {
    if (fix_beta_) return SkewNormalParams(nk_.k, std::exp(x[1]), x[2]);
    return SkewNormalParams(x[1], std::exp(x[2]), x[3]);
  }

  double pi_of(std::span<const double> x) const { return inv_logit(x[0]); }

  std::vector<double> initial_point(RngStream& rng) const override {
    double lp = priors_.logit_pi.mean + priors_.logit_pi.sd * rng.normal();
    // omega prior is a truncated normal; draw |N(mean, sd)| as a cheap stand-in
    double w = std::fabs(priors_.omega.mean + priors_.omega.sd * rng.normal());
    w = std::max(w, 0.05 * nk_.half_width);
    double d = priors_.delta.mean + priors_.delta.sd * rng.normal();
    std::vector<double> x;
    x.push_back(lp + rng.uniform(-1, 1));
    if (!fix_beta_) x.push_back(nk_.k + rng.uniform(-1, 1));
    x.push_back(std::log(w) + rng.uniform(-1, 1));
    x.push_back(d + rng.uniform(-1, 1));
    return x;
  }

  double value_grad(std::span<const double> x,
                    std::span<double> grad) const override {
    for (double xi : x) {
      if (!std::isfinite(xi)) return reject(grad);
    }
    int iw = fix_beta_ ? 1 : 2;  // index of log omega
    int id = iw + 1;             // index of delta
    if (x[iw] > 300.0) return reject(grad);
    double pi = inv_logit(x[0]);
    double omega = std::exp(x[iw]);
    double delta = x[id];
    double beta = fix_beta_ ? nk_.k : x[1];
    if (!(pi > 0.0) || !(pi < 1.0) || !(omega > 0.0)) return reject(grad);

    std::fill(grad.begin(), grad.end(), 0.0);
    // priors: logit pi normal on the unconstrained coordinate; omega
    // truncated-normal with +log omega Jacobian; delta (and beta) normal
    double v = priors_.logit_pi.logpdf(x[0]) + priors_.omega.logpdf(omega) +
               x[iw] + priors_.delta.logpdf(delta);
    grad[0] += priors_.logit_pi.dlogpdf(x[0]);
    grad[iw] += priors_.omega.dlogpdf(omega) * omega + 1.0;
    grad[id] += priors_.delta.dlogpdf(delta);
    if (!fix_beta_) {
      v += priors_.beta_free.logpdf(beta);
      grad[1] += priors_.beta_free.dlogpdf(beta);
    }

    try {
      SkewNormalParams gamma(beta, omega, delta);
      double lpi = std::log(pi), l1mpi = std::log1p(-pi);
      for (const auto& obs : inside_) {
        double lf = sn_logpdf(obs.y, gamma);
        double lg = sm_logpdf(obs.y, theta_hat_);
        double A = lpi + lf, B = l1mpi + lg;
        double M = log_sum_exp(A, B);
        if (!std::isfinite(M)) return reject(grad);
        v += M;
        double wA = std::exp(A - M), wB = std::exp(B - M);
        grad[0] += wA * (1.0 - pi) - wB * pi;  // d/d logit pi
        auto gf = sn_grad_logpdf(obs.y, gamma);
        if (!fix_beta_) grad[1] += wA * gf[0];
        grad[iw] += wA * gf[1] * omega;
        grad[id] += wA * gf[2];
      }
      // conditional-likelihood normalizer: inside data are observed given
      // Y in N_K, whose probability pi*F(gamma) + (1-pi)*W depends on the
      // parameters; omitting it drives pi to 1
      if (!inside_.empty()) {
        double F;
        std::array<double, 3> gF;
        sn_window_mass_grad(gamma, nk_, F, gF);
        double mass = pi * F + (1.0 - pi) * theta_window_mass_;
        if (!(mass > 0.0)) return reject(grad);
        double n = static_cast<double>(inside_.size());
        v -= n * std::log(mass);
        grad[0] -= n * (F - theta_window_mass_) * pi * (1.0 - pi) / mass;
        if (!fix_beta_) grad[1] -= n * pi * gF[0] / mass;
        grad[iw] -= n * pi * gF[1] * omega / mass;
        grad[id] -= n * pi * gF[2] / mass;
      }
    } catch (const DomainError&) {
      return reject(grad);
    }
    if (!std::isfinite(v)) return reject(grad);
    return v;
  }

  const NeighborhoodSpec& neighborhood() const { return nk_; }
  const SinghMaddalaParams& theta_hat() const { return theta_hat_; }
  bool fix_beta() const { return fix_beta_; }

private:
  std::vector<Observation> inside_;
  NeighborhoodSpec nk_;
  SinghMaddalaParams theta_hat_;
  PriorConfig priors_;
  bool fix_beta_;
  double theta_window_mass_ = 0.0;
};

//! Hierarchical step 1: per-group theta_g with log-normal random effects and
//! hyperparameters alpha_theta. Layout: [log a_g, log b_g, log q_g] x G,
//! then mu_a, mu_b, mu_q, log sigma_a, log sigma_b, log sigma_q.
class HierStep1Model final : public PosteriorModel {
public:
  HierStep1Model(std::vector<std::vector<Observation>> outside_by_group,
                 std::vector<NeighborhoodSpec> nks, PriorConfig priors)
      : groups_(std::move(outside_by_group)),
        nks_(validate_neighborhoods(std::move(nks))),
        priors_(priors) {}

  int n_groups() const { return static_cast<int>(groups_.size()); }
  int dim() const override { return 3 * n_groups() + 6; }

  std::vector<std::string> param_names() const override {
    std::vector<std::string> names;
    for (int g = 0; g < n_groups(); ++g) {
      auto s = std::to_string(g);
      names.push_back("a[" + s + "]");
      names.push_back("b[" + s + "]");
      names.push_back("q[" + s + "]");
    }
    for (const char* h : {"mu_a", "mu_b", "mu_q", "sigma_a", "sigma_b", "sigma_q"})
      names.push_back(h);
    return names;
  }

  std::vector<double> constrain(std::span<const double> x) const override {
    std::vector<double> out(x.size());
    int G = n_groups();
    for (int i = 0; i < 3 * G; ++i) out[i] = std::exp(x[i]);
    for (int j = 0; j < 3; ++j) out[3 * G + j] = x[3 * G + j];
    for (int j = 3; j < 6; ++j) out[3 * G + j] = std::exp(x[3 * G + j]);
    return out;
  }

  std::vector<double> initial_point(RngStream& rng) const override {
    int G = n_groups();
    std::vector<double> x(dim());
    double mu_a = priors_.mu_a.mean + 0.3 * rng.normal();
    double mu_b = priors_.mu_b.mean + 0.3 * rng.normal();
    double mu_q = priors_.mu_q.mean + 0.3 * rng.normal();
    for (int g = 0; g < G; ++g) {
      x[3 * g + 0] = mu_a + 0.2 * rng.normal() + 0.3 * rng.uniform(-1, 1);
      x[3 * g + 1] = mu_b + 0.2 * rng.normal() + 0.3 * rng.uniform(-1, 1);
      x[3 * g + 2] = mu_q + 0.2 * rng.normal() + 0.3 * rng.uniform(-1, 1);
    }
    x[3 * G + 0] = mu_a;
    x[3 * G + 1] = mu_b;
    x[3 * G + 2] = mu_q;
    for (int j = 3; j < 6; ++j) x[3 * G + j] = std::log(0.3) + rng.uniform(-0.5, 0.5);
    return x;
  }

  double value_grad(std::span<const double> x,
                    std::span<double> grad) const override {
    const int G = n_groups();
    for (double xi : x) {
      if (!std::isfinite(xi)) return reject(grad);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const int H = 3 * G;  // offset of hyperparameters
    double mu[3] = {x[H + 0], x[H + 1], x[H + 2]};
    double lsig[3] = {x[H + 3], x[H + 4], x[H + 5]};
    double sig[3];
    for (int j = 0; j < 3; ++j) {
      if (lsig[j] > 50.0 || lsig[j] < -50.0) return reject(grad);
      sig[j] = std::exp(lsig[j]);
    }

    const NormalPrior* mu_priors[3] = {&priors_.mu_a, &priors_.mu_b, &priors_.mu_q};
    const HalfNormalPrior* sig_priors[3] = {&priors_.sigma_a, &priors_.sigma_b,
                                            &priors_.sigma_q};
    double v = 0.0;
    for (int j = 0; j < 3; ++j) {
      v += mu_priors[j]->logpdf(mu[j]);
      grad[H + j] += mu_priors[j]->dlogpdf(mu[j]);
      v += sig_priors[j]->logpdf(sig[j]) + lsig[j];
      grad[H + 3 + j] += sig_priors[j]->dlogpdf(sig[j]) * sig[j] + 1.0;
    }

    for (int g = 0; g < G; ++g) {
      for (int j = 0; j < 3; ++j) {
        double xi = x[3 * g + j];
        if (xi > 300.0) return reject(grad);
        double z = (xi - mu[j]) / sig[j];
        v += -std::log(sig[j]) - 0.5 * (kLogTwoPi + z * z);
        grad[3 * g + j] += -z / sig[j];
        grad[H + j] += z / sig[j];
        grad[H + 3 + j] += z * z - 1.0;  // d/d log sigma
      }
      try {
        SinghMaddalaParams theta(std::exp(x[3 * g + 0]), std::exp(x[3 * g + 1]),
                                 std::exp(x[3 * g + 2]));
        double z = sm_outside_mass(theta, nks_);
        if (!(z > 0.0)) return reject(grad);
        double n = static_cast<double>(groups_[g].size());
        double ll = -n * std::log(z);
        auto gz = sm_outside_mass_grad(theta, nks_);
        std::array<double, 3> gl{-n * gz[0] / z, -n * gz[1] / z, -n * gz[2] / z};
        for (const auto& obs : groups_[g]) {
          ll += sm_logpdf(obs.y, theta);
          auto gi = sm_grad_logpdf(obs.y, theta);
          for (int j = 0; j < 3; ++j) gl[j] += gi[j];
        }
        if (!std::isfinite(ll)) return reject(grad);
        v += ll;
        grad[3 * g + 0] += gl[0] * theta.a;
        grad[3 * g + 1] += gl[1] * theta.b;
        grad[3 * g + 2] += gl[2] * theta.q;
      } catch (const DomainError&) {
        return reject(grad);
      }
    }
    if (!std::isfinite(v)) return reject(grad);
    return v;
  }

private:
  std::vector<std::vector<Observation>> groups_;
  std::vector<NeighborhoodSpec> nks_;
  PriorConfig priors_;
};

//! Hierarchical step 2 for one neighborhood: per-group (pi_g, gamma_g) with
//! random effects, theta_g fixed at the hierarchical step-1 posterior means.
//! Layout per group: logit pi_g, [beta_g,] log omega_g, delta_g; then
//! mu_pi, mu_omega, mu_delta, log sigma_pi, log sigma_omega, log sigma_delta
//! [, log sigma_beta].
class HierStep2Model final : public PosteriorModel {
public:
  HierStep2Model(std::vector<std::vector<Observation>> inside_by_group,
                 NeighborhoodSpec nk, std::vector<SinghMaddalaParams> theta_hats,
                 PriorConfig priors, bool fix_beta = true)
      : groups_(std::move(inside_by_group)),
        nk_(nk),
        theta_hats_(std::move(theta_hats)),
        priors_(priors),
        fix_beta_(fix_beta) {
    if (theta_hats_.size() != groups_.size()) {
      throw ConfigError("HierStep2Model: theta_hats size mismatch");
    }
    for (const auto& th : theta_hats_) {
      theta_window_mass_.push_back(sm_cdf(nk_.hi(), th) - sm_cdf(nk_.lo(), th));
    }
  }

  int n_groups() const { return static_cast<int>(groups_.size()); }
  int per_group() const { return fix_beta_ ? 3 : 4; }
  int n_hyper() const { return fix_beta_ ? 6 : 7; }
  int dim() const override { return per_group() * n_groups() + n_hyper(); }

  std::vector<std::string> param_names() const override {
    std::vector<std::string> names;
    for (int g = 0; g < n_groups(); ++g) {
      auto s = std::to_string(g);
      names.push_back("pi[" + s + "]");
      if (!fix_beta_) names.push_back("beta[" + s + "]");
      names.push_back("omega[" + s + "]");
      names.push_back("delta[" + s + "]");
    }
    for (const char* h :
         {"mu_pi", "mu_omega", "mu_delta", "sigma_pi", "sigma_omega", "sigma_delta"})
      names.push_back(h);
    if (!fix_beta_) names.push_back("sigma_beta");
    return names;
  }

  std::vector<double> constrain(std::span<const double> x) const override {
    std::vector<double> out;
    out.reserve(x.size());
    const int P = per_group();
    for (int g = 0; g < n_groups(); ++g) {
      const double* xg = x.data() + P * g;
      out.push_back(inv_logit(xg[0]));
      if (!fix_beta_) out.push_back(xg[1]);
      out.push_back(std::exp(xg[P - 2]));
      out.push_back(xg[P - 1]);
    }
    const int H = P * n_groups();
    for (int j = 0; j < 3; ++j) out.push_back(x[H + j]);
    for (int j = 3; j < n_hyper(); ++j) out.push_back(std::exp(x[H + j]));
    return out;
  }

  MixtureParams psi_of(std::span<const double> x, int g) const {
    const int P = per_group();
    const double* xg = x.data() + P * g;
    double beta = fix_beta_ ? nk_.k : xg[1];
    return MixtureParams(inv_logit(xg[0]),
                         SkewNormalParams(beta, std::exp(xg[P - 2]), xg[P - 1]),
                         theta_hats_[static_cast<std::size_t>(g)]);
  }

  std::vector<double> initial_point(RngStream& rng) const override {
    const int G = n_groups(), P = per_group();
    std::vector<double> x(dim());
    double mu_pi = priors_.mu_pi.mean + 0.3 * rng.normal();
    double mu_w = priors_.mu_omega.mean + 0.3 * rng.normal();
    double mu_d = priors_.mu_delta.mean + 0.3 * rng.normal();
    for (int g = 0; g < G; ++g) {
      double* xg = x.data() + P * g;
      xg[0] = mu_pi + 0.3 * rng.normal() + 0.3 * rng.uniform(-1, 1);
      if (!fix_beta_) xg[1] = nk_.k + rng.uniform(-1, 1);
      xg[P - 2] = mu_w + 0.2 * rng.normal() + 0.2 * rng.uniform(-1, 1);
      xg[P - 1] = mu_d + 0.3 * rng.normal() + 0.3 * rng.uniform(-1, 1);
    }
    const int H = P * G;
    x[H + 0] = mu_pi;
    x[H + 1] = mu_w;
    x[H + 2] = mu_d;
    for (int j = 3; j < n_hyper(); ++j) x[H + j] = std::log(0.3) + rng.uniform(-0.5, 0.5);
    return x;
  }

  double value_grad(std::span<const double> x,
                    std::span<double> grad) const override {
    const int G = n_groups(), P = per_group(), NH = n_hyper();
    for (double xi : x) {
      if (!std::isfinite(xi)) return reject(grad);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const int H = P * G;
    double mu[3] = {x[H + 0], x[H + 1], x[H + 2]};  // pi, omega, delta
    double sig[4];
    for (int j = 3; j < NH; ++j) {
      if (std::fabs(x[H + j]) > 50.0) return reject(grad);
      sig[j - 3] = std::exp(x[H + j]);
    }

    const NormalPrior* mu_priors[3] = {&priors_.mu_pi, &priors_.mu_omega,
                                       &priors_.mu_delta};
    const HalfNormalPrior* sig_priors[4] = {&priors_.sigma_pi, &priors_.sigma_omega,
                                            &priors_.sigma_delta, &priors_.sigma_beta};
    double v = 0.0;
    for (int j = 0; j < 3; ++j) {
      v += mu_priors[j]->logpdf(mu[j]);
      grad[H + j] += mu_priors[j]->dlogpdf(mu[j]);
    }
    for (int j = 3; j < NH; ++j) {
      v += sig_priors[j - 3]->logpdf(sig[j - 3]) + x[H + j];
      grad[H + j] += sig_priors[j - 3]->dlogpdf(sig[j - 3]) * sig[j - 3] + 1.0;
    }

    for (int g = 0; g < G; ++g) {
      const double* xg = x.data() + P * g;
      double* gg = grad.data() + P * g;
      // random-effect coordinates in unconstrained space:
      // logit pi_g ~ N(mu_pi, s), log omega_g ~ N(mu_omega, s), delta_g ~ N(mu_delta, s)
      double coords[3] = {xg[0], xg[P - 2], xg[P - 1]};
      int idx[3] = {0, P - 2, P - 1};
      for (int j = 0; j < 3; ++j) {
        double z = (coords[j] - mu[j]) / sig[j];
        v += -std::log(sig[j]) - 0.5 * (kLogTwoPi + z * z);
        gg[idx[j]] += -z / sig[j];
        grad[H + j] += z / sig[j];
        grad[H + 3 + j] += z * z - 1.0;
      }
      if (!fix_beta_) {
        double z = (xg[1] - nk_.k) / sig[3];
        v += -std::log(sig[3]) - 0.5 * (kLogTwoPi + z * z);
        gg[1] += -z / sig[3];
        grad[H + 6] += z * z - 1.0;
      }
      if (xg[P - 2] > 300.0) return reject(grad);
      double pi = inv_logit(xg[0]);
      double omega = std::exp(xg[P - 2]);
      double delta = xg[P - 1];
      double beta = fix_beta_ ? nk_.k : xg[1];
      if (!(pi > 0.0) || !(pi < 1.0) || !(omega > 0.0)) return reject(grad);
      try {
        SkewNormalParams gamma(beta, omega, delta);
        const auto& theta = theta_hats_[static_cast<std::size_t>(g)];
        double lpi = std::log(pi), l1mpi = std::log1p(-pi);
        for (const auto& obs : groups_[g]) {
          double A = lpi + sn_logpdf(obs.y, gamma);
          double B = l1mpi + sm_logpdf(obs.y, theta);
          double M = log_sum_exp(A, B);
          if (!std::isfinite(M)) return reject(grad);
          v += M;
          double wA = std::exp(A - M), wB = std::exp(B - M);
          gg[0] += wA * (1.0 - pi) - wB * pi;
          auto gf = sn_grad_logpdf(obs.y, gamma);
          if (!fix_beta_) gg[1] += wA * gf[0];
          gg[P - 2] += wA * gf[1] * omega;
          gg[P - 1] += wA * gf[2];
        }
        // per-group conditional-likelihood normalizer (see Step2Model)
        if (!groups_[g].empty()) {
          double F;
          std::array<double, 3> gF;
          sn_window_mass_grad(gamma, nk_, F, gF);
          double W = theta_window_mass_[static_cast<std::size_t>(g)];
          double mass = pi * F + (1.0 - pi) * W;
          if (!(mass > 0.0)) return reject(grad);
          double n = static_cast<double>(groups_[g].size());
          v -= n * std::log(mass);
          gg[0] -= n * (F - W) * pi * (1.0 - pi) / mass;
          if (!fix_beta_) gg[1] -= n * pi * gF[0] / mass;
          gg[P - 2] -= n * pi * gF[1] * omega / mass;
          gg[P - 1] -= n * pi * gF[2] / mass;
        }
      } catch (const DomainError&) {
        return reject(grad);
      }
    }
    if (!std::isfinite(v)) return reject(grad);
    return v;
  }

  const NeighborhoodSpec& neighborhood() const { return nk_; }
  bool fix_beta() const { return fix_beta_; }

private:
  std::vector<std::vector<Observation>> groups_;
  NeighborhoodSpec nk_;
  std::vector<SinghMaddalaParams> theta_hats_;
  PriorConfig priors_;
  bool fix_beta_;
  std::vector<double> theta_window_mass_;
};

//! Splits a partition's buckets by group label into dense per-group vectors.
inline std::vector<std::vector<Observation>> by_group(
    const std::vector<Observation>& obs, int n_groups) {
  std::vector<std::vector<Observation>> out(static_cast<std::size_t>(n_groups));
  for (const auto& o : obs) {
    if (o.group < 0 || o.group >= n_groups) {
      throw ConfigError("by_group: group label out of range");
    }
    out[static_cast<std::size_t>(o.group)].push_back(o);
  }
  return out;
}

}  // namespace bmtm
