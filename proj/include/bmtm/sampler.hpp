#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bmtm/math.hpp"
#include "bmtm/model.hpp"
#include "bmtm/rng.hpp"

namespace bmtm {

struct SamplerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  std::uint64_t seed = 0;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  int threads = 0;  // 0 = one thread per chain, capped at hardware concurrency

  void validate() const {
    if (chains < 1 || warmup < 100 || samples < 1 || !(target_accept > 0.0) ||
        !(target_accept < 1.0) || max_tree_depth < 1) {
      throw ConfigError("SamplerConfig: invalid configuration");
    }
  }
};

//! Multi-chain posterior draws in constrained space, chain-major storage.
struct PosteriorDraws {
  int n_samples = 0;
  int n_chains = 0;
  std::vector<std::string> names;
  std::vector<double> data;        // [(c * n_samples + s) * dim + p]
  std::vector<std::uint8_t> divergent;  // [c * n_samples + s]
  std::vector<double> energy_error;     // mean |dH| per post-warmup transition
  double divergence_rate = 0.0;
  bool divergence_warning = false;  // >10% divergent transitions post-warmup

  int dim() const { return static_cast<int>(names.size()); }

  double at(int c, int s, int p) const {
    return data[(static_cast<std::size_t>(c) * static_cast<std::size_t>(n_samples) +
                 static_cast<std::size_t>(s)) * static_cast<std::size_t>(dim()) +
                static_cast<std::size_t>(p)];
  }

  int param_index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    throw SamplerError("unknown parameter: " + name);
  }

  //! All post-warmup draws of one parameter, chains concatenated.
  std::vector<double> pooled(int p) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n_samples) * static_cast<std::size_t>(n_chains));
    for (int c = 0; c < n_chains; ++c)
      for (int s = 0; s < n_samples; ++s) out.push_back(at(c, s, p));
    return out;
  }

  std::vector<double> chain(int c, int p) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n_samples));
    for (int s = 0; s < n_samples; ++s) out.push_back(at(c, s, p));
    return out;
  }
};

namespace detail {

struct ChainResult {
  std::vector<double> draws;  // [s * dim + p], constrained
  std::vector<std::uint8_t> divergent;
  std::vector<double> energy_error;
  double step_size = 0.0;
  std::vector<double> inv_mass;
};

class NutsChain {
public:
  NutsChain(const PosteriorModel& model, const SamplerConfig& cfg,
            std::vector<double> init, RngStream rng)
      : model_(model), cfg_(cfg), x_(std::move(init)), rng_(rng),
        dim_(static_cast<std::size_t>(model.dim())),
        inv_mass_(dim_, 1.0) {
    grad_.resize(dim_);
    logp_ = model_.value_grad(x_, grad_);
    if (!std::isfinite(logp_)) {
      throw SamplerError("objective not finite at chain init point");
    }
  }

  ChainResult run() {
    find_initial_step_size();
    adapt();
    ChainResult out;
    out.draws.reserve(static_cast<std::size_t>(cfg_.samples) * dim_);
    out.divergent.reserve(static_cast<std::size_t>(cfg_.samples));
    for (int s = 0; s < cfg_.samples; ++s) {
      bool div = transition();
      auto c = model_.constrain(x_);
      out.draws.insert(out.draws.end(), c.begin(), c.end());
      out.divergent.push_back(div ? 1 : 0);
      out.energy_error.push_back(n_alpha_ > 0 ? sum_abs_dh_ / n_alpha_ : 0.0);
    }
    out.step_size = eps_;
    out.inv_mass = inv_mass_;
    return out;
  }

private:
  struct State {
    std::vector<double> x, p, grad;
    double logp;
  };

  double hamiltonian(const State& s) const {
    double k = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) k += s.p[i] * s.p[i] * inv_mass_[i];
    return -s.logp + 0.5 * k;
  }

  void leapfrog(State& s, double eps) const {
    for (std::size_t i = 0; i < dim_; ++i) s.p[i] += 0.5 * eps * s.grad[i];
    for (std::size_t i = 0; i < dim_; ++i) s.x[i] += eps * inv_mass_[i] * s.p[i];
    s.logp = model_.value_grad(s.x, s.grad);
    for (std::size_t i = 0; i < dim_; ++i) s.p[i] += 0.5 * eps * s.grad[i];
  }

  State make_state() {
    State s;
    s.x = x_;
    s.grad = grad_;
    s.logp = logp_;
    s.p.resize(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      s.p[i] = rng_.normal() / std::sqrt(inv_mass_[i]);
    return s;
  }

  void find_initial_step_size() {
    eps_ = 1.0;
    State s0 = make_state();
    double h0 = hamiltonian(s0);
    State s = s0;
    leapfrog(s, eps_);
    double h1 = hamiltonian(s);
    if (!std::isfinite(h1)) h1 = h0 + 1e6;
    double a = (h0 - h1) > std::log(0.5) ? 1.0 : -1.0;
    for (int iter = 0; iter < 100; ++iter) {
      s = s0;
      leapfrog(s, eps_);
      h1 = hamiltonian(s);
      if (!std::isfinite(h1)) h1 = h0 + 1e6;
      double log_ratio = h0 - h1;
      if (a * log_ratio > a * std::log(0.5)) {
        eps_ *= std::pow(2.0, a);
      } else {
        break;
      }
      if (eps_ > 1e7 || eps_ < 1e-10) break;
    }
  }

  //! One NUTS transition from the current point; returns divergence flag.
  bool transition() {
    State init = make_state();
    double h0 = hamiltonian(init);
    // slice variable in log space
    double log_u = std::log(rng_.uniform()) - h0;

    State minus = init, plus = init;
    std::vector<double> x_prop = init.x;
    std::vector<double> grad_prop = init.grad;
    double logp_prop = init.logp;
    int n = 1;
    bool keep_going = true;
    divergent_ = false;
    sum_alpha_ = 0.0;
    sum_abs_dh_ = 0.0;
    n_alpha_ = 0;

    for (int depth = 0; depth < cfg_.max_tree_depth && keep_going; ++depth) {
      int dir = rng_.bernoulli(0.5) ? 1 : -1;
      State& edge = (dir == 1) ? plus : minus;
      SubTree t = build_tree(edge, dir, depth, log_u, h0);
      if (t.valid && rng_.uniform() < static_cast<double>(t.n) / std::max(n, 1)) {
        x_prop = t.x_prop;
        grad_prop = t.grad_prop;
        logp_prop = t.logp_prop;
      }
      n += t.n;
      keep_going = t.valid && !u_turn(minus, plus);
    }

    x_ = x_prop;
    grad_ = grad_prop;
    logp_ = logp_prop;
    return divergent_;
  }

  struct SubTree {
    std::vector<double> x_prop, grad_prop;
    double logp_prop = 0.0;
    int n = 0;
    bool valid = false;
  };

  //! Doubles the trajectory from `edge` in direction dir; edge is advanced to
  //! the new extreme. depth = number of doublings (2^depth leapfrog steps).
  SubTree build_tree(State& edge, int dir, int depth, double log_u, double h0) {
    if (depth == 0) {
      // base case: single leapfrog step
      leapfrog(edge, dir * eps_);
      double h = hamiltonian(edge);
      if (!std::isfinite(h)) h = std::numeric_limits<double>::infinity();
      double dh = h - h0;
      if (dh > 1000.0) {
        divergent_ = true;
        SubTree t;
        t.valid = false;
        track_accept(dh);
        return t;
      }
      SubTree t;
      t.n = (log_u <= -h) ? 1 : 0;
      t.valid = (log_u < 1000.0 - h);
      t.x_prop = edge.x;
      t.grad_prop = edge.grad;
      t.logp_prop = edge.logp;
      track_accept(dh);
      return t;
    }
    // inner subtree
    State inner_start = edge;
    SubTree t1 = build_tree(edge, dir, depth - 1, log_u, h0);
    if (!t1.valid) return t1;
    SubTree t2 = build_tree(edge, dir, depth - 1, log_u, h0);
    SubTree t;
    t.n = t1.n + t2.n;
    bool no_uturn = (dir == 1) ? !u_turn(inner_start, edge) : !u_turn(edge, inner_start);
    t.valid = t1.valid && t2.valid && no_uturn;
    if (t2.n > 0 &&
        rng_.uniform() < static_cast<double>(t2.n) / std::max(t.n, 1)) {
      t.x_prop = t2.x_prop;
      t.grad_prop = t2.grad_prop;
      t.logp_prop = t2.logp_prop;
    } else {
      t.x_prop = t1.x_prop;
      t.grad_prop = t1.grad_prop;
      t.logp_prop = t1.logp_prop;
    }
    return t;
  }

  bool u_turn(const State& minus, const State& plus) const {
    double dot_minus = 0.0, dot_plus = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      double dx = plus.x[i] - minus.x[i];
      dot_minus += dx * inv_mass_[i] * minus.p[i];
      dot_plus += dx * inv_mass_[i] * plus.p[i];
    }
    return dot_minus < 0.0 || dot_plus < 0.0;
  }

  void track_accept(double dh) {
    sum_alpha_ += std::exp(std::min(0.0, -dh));
    if (std::isfinite(dh)) sum_abs_dh_ += std::fabs(dh);
    ++n_alpha_;
  }

  // ---- warmup -------------------------------------------------------------

  void adapt() {
    int w = cfg_.warmup;
    // Stan-style three-phase schedule, scaled down for short warmups
    int init_buf = std::min(75, std::max(10, w * 15 / 100));
    int term_buf = std::min(50, std::max(10, w * 10 / 100));
    int window = std::min(25, std::max(5, w * 5 / 100));
    int win_start = init_buf;
    int win_end = next_window_end(win_start, window, w - term_buf);

    DualAveraging da(eps_, cfg_.target_accept);
    std::vector<double> wsum(dim_, 0.0), wsum2(dim_, 0.0);
    std::size_t wn = 0;

    for (int it = 0; it < w; ++it) {
      transition();
      double alpha = n_alpha_ > 0 ? sum_alpha_ / n_alpha_ : 0.0;
      eps_ = da.update(alpha);
      bool in_window = it >= win_start && it < win_end;
      if (in_window) {
        for (std::size_t i = 0; i < dim_; ++i) {
          wsum[i] += x_[i];
          wsum2[i] += x_[i] * x_[i];
        }
        ++wn;
      }
      if (it + 1 == win_end && win_end < w - term_buf + 1 && wn >= 5) {
        // freeze a regularized variance estimate into the metric
        double nn = static_cast<double>(wn);
        for (std::size_t i = 0; i < dim_; ++i) {
          double mean = wsum[i] / nn;
          double var = std::max(0.0, wsum2[i] / nn - mean * mean) * nn / (nn - 1.0);
          inv_mass_[i] = (nn / (nn + 5.0)) * var + 1e-3 * (5.0 / (nn + 5.0));
          if (!(inv_mass_[i] > 1e-10)) inv_mass_[i] = 1e-10;
        }
        std::fill(wsum.begin(), wsum.end(), 0.0);
        std::fill(wsum2.begin(), wsum2.end(), 0.0);
        wn = 0;
        window *= 2;
        win_start = it + 1;
        win_end = next_window_end(win_start, window, w - term_buf);
        // metric changed: re-tune the step size
        find_initial_step_size();
        da = DualAveraging(eps_, cfg_.target_accept);
      }
    }
    eps_ = da.final();
  }

  static int next_window_end(int start, int window, int limit) {
    int end = start + window;
    // absorb a final partial window into the last full one
    if (end + 2 * window > limit) end = limit;
    return std::min(end, limit);
  }

  class DualAveraging {
  public:
    DualAveraging(double eps0, double delta)
        : mu_(std::log(10.0 * eps0)), delta_(delta) {}

    double update(double alpha) {
      ++t_;
      double eta = 1.0 / (t_ + t0_);
      hbar_ = (1.0 - eta) * hbar_ + eta * (delta_ - alpha);
      double log_eps = mu_ - std::sqrt(t_) / gamma_ * hbar_;
      double pow_t = std::pow(t_, -kappa_);
      log_eps_bar_ = pow_t * log_eps + (1.0 - pow_t) * log_eps_bar_;
      return std::exp(log_eps);
    }

    double final() const { return std::exp(log_eps_bar_); }

  private:
    double mu_;
    double delta_;
    double t_ = 0.0;
    double hbar_ = 0.0;
    double log_eps_bar_ = 0.0;
    static constexpr double gamma_ = 0.05;
    static constexpr double t0_ = 10.0;
    static constexpr double kappa_ = 0.75;
  };

  const PosteriorModel& model_;
  SamplerConfig cfg_;
  std::vector<double> x_, grad_;
  double logp_ = 0.0;
  RngStream rng_;
  std::size_t dim_;
  std::vector<double> inv_mass_;
  double eps_ = 1.0;
  bool divergent_ = false;
  double sum_alpha_ = 0.0;
  double sum_abs_dh_ = 0.0;
  int n_alpha_ = 0;
};

}  // namespace detail

//! Runs cfg.chains independent NUTS chains over the model's log density.
//! Deterministic given cfg.seed; chains differ by derived seed only.
inline PosteriorDraws run_chains(const PosteriorModel& model,
                                 const SamplerConfig& cfg) {
  cfg.validate();
  const int dim = model.dim();
  std::vector<detail::ChainResult> results(static_cast<std::size_t>(cfg.chains));
  std::vector<std::string> errors(static_cast<std::size_t>(cfg.chains));

  auto run_one = [&](int c) {
    try {
      RngStream rng = RngStream(cfg.seed).derive(static_cast<std::uint64_t>(c));
      RngStream init_rng = rng.derive(0x1234);
      // retry a few jittered prior inits if the objective is not finite there
      std::vector<double> init;
      bool ok = false;
      for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        init = model.initial_point(init_rng);
        std::vector<double> g(static_cast<std::size_t>(dim));
        ok = std::isfinite(model.value_grad(init, g));
      }
      if (!ok) throw SamplerError("no finite initialization found");
      detail::NutsChain chain(model, cfg, std::move(init), rng);
      results[static_cast<std::size_t>(c)] = chain.run();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(c)] = e.what();
    }
  };

  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int nthreads = cfg.threads > 0 ? cfg.threads : (hw > 0 ? hw : 1);
  if (nthreads <= 1 || cfg.chains == 1) {
    for (int c = 0; c < cfg.chains; ++c) run_one(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    int workers = std::min(nthreads, cfg.chains);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&]() {
        for (int c = next.fetch_add(1); c < cfg.chains; c = next.fetch_add(1)) {
          run_one(c);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  for (const auto& e : errors) {
    if (!e.empty()) throw SamplerError("chain failed: " + e);
  }

  PosteriorDraws out;
  out.n_samples = cfg.samples;
  out.n_chains = cfg.chains;
  out.names = model.param_names();
  out.data.reserve(static_cast<std::size_t>(cfg.chains) *
                   static_cast<std::size_t>(cfg.samples) * out.names.size());
  std::size_t ndiv = 0;
  for (const auto& r : results) {
    out.data.insert(out.data.end(), r.draws.begin(), r.draws.end());
    out.divergent.insert(out.divergent.end(), r.divergent.begin(), r.divergent.end());
    out.energy_error.insert(out.energy_error.end(), r.energy_error.begin(),
                            r.energy_error.end());
    for (auto d : r.divergent) ndiv += d;
  }
  out.divergence_rate =
      static_cast<double>(ndiv) /
      static_cast<double>(std::max<std::size_t>(1, out.divergent.size()));
  out.divergence_warning = out.divergence_rate > 0.10;
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

//! Split-chain potential scale reduction factor.
inline double rhat(const PosteriorDraws& draws, int p) {
  if (draws.n_chains < 2 || draws.n_samples < 4) {
    throw SamplerError("rhat requires >= 2 chains and >= 4 draws per chain");
  }
  int half = draws.n_samples / 2;
  int m = 2 * draws.n_chains;
  std::vector<double> means, vars;
  for (int c = 0; c < draws.n_chains; ++c) {
    for (int part = 0; part < 2; ++part) {
      double sum = 0.0, sum2 = 0.0;
      for (int s = part * half; s < (part + 1) * half; ++s) {
        double v = draws.at(c, s, p);
        sum += v;
        sum2 += v * v;
      }
      double n = static_cast<double>(half);
      double mean = sum / n;
      means.push_back(mean);
      vars.push_back(std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0)));
    }
  }
  double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= static_cast<double>(half) / (m - 1.0);
  double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  // constant chains (within rounding) report 1 by convention
  if (w <= 1e-10 * (grand * grand + 1e-300) + 1e-300) return 1.0;
  double n = static_cast<double>(half);
  double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

inline double rhat(const PosteriorDraws& draws, const std::string& name) {
  return rhat(draws, draws.param_index(name));
}

//! Effective sample size via chain-averaged autocorrelations with Geyer's
//! initial monotone positive sequence. Constant chains report 0.
inline double ess(const PosteriorDraws& draws, int p) {
  if (draws.n_chains < 2 || draws.n_samples < 4) {
    throw SamplerError("ess requires >= 2 chains and >= 4 draws per chain");
  }
  const int m = draws.n_chains;
  const int n = draws.n_samples;
  std::vector<std::vector<double>> chains;
  std::vector<double> chain_mean(static_cast<std::size_t>(m));
  std::vector<double> chain_var(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c) {
    auto v = draws.chain(c, p);
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= (n - 1.0);
    chain_mean[static_cast<std::size_t>(c)] = mean;
    chain_var[static_cast<std::size_t>(c)] = var;
    chains.push_back(std::move(v));
  }
  double w = std::accumulate(chain_var.begin(), chain_var.end(), 0.0) / m;
  double grand = std::accumulate(chain_mean.begin(), chain_mean.end(), 0.0) / m;
  double b_over_n = 0.0;
  for (double mu : chain_mean) b_over_n += (mu - grand) * (mu - grand);
  b_over_n /= (m - 1.0);
  double var_plus = w * (n - 1.0) / n + b_over_n;
  if (var_plus <= 0.0 || w <= 0.0) return 0.0;  // degenerate (constant) chains

  auto acov = [&](int c, int t) {
    const auto& v = chains[static_cast<std::size_t>(c)];
    double mean = chain_mean[static_cast<std::size_t>(c)];
    double s = 0.0;
    for (int i = 0; i + t < n; ++i) s += (v[static_cast<std::size_t>(i)] - mean) *
                                         (v[static_cast<std::size_t>(i + t)] - mean);
    return s / n;
  };

  int max_lag = n - 4;
  double tau = 1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int t = 1; t + 1 < max_lag; t += 2) {
    double ac_t = 0.0, ac_t1 = 0.0;
    for (int c = 0; c < m; ++c) {
      ac_t += acov(c, t);
      ac_t1 += acov(c, t + 1);
    }
    double rho_t = 1.0 - (w - ac_t / m) / var_plus;
    double rho_t1 = 1.0 - (w - ac_t1 / m) / var_plus;
    double pair = rho_t + rho_t1;
    if (pair < 0.0) break;                    // initial positive sequence
    pair = std::min(pair, prev_pair);         // monotone decreasing envelope
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  double total = static_cast<double>(m) * static_cast<double>(n);
  return total / tau;
}

inline double ess(const PosteriorDraws& draws, const std::string& name) {
  return ess(draws, draws.param_index(name));
}

inline double posterior_mean(const PosteriorDraws& draws, int p) {
  if (draws.n_samples == 0 || draws.n_chains == 0) {
    throw SamplerError("posterior_mean: empty draws");
  }
  auto v = draws.pooled(p);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double posterior_mean(const PosteriorDraws& draws, const std::string& name) {
  return posterior_mean(draws, draws.param_index(name));
}

inline double posterior_median(const PosteriorDraws& draws, int p) {
  if (draws.n_samples == 0 || draws.n_chains == 0) {
    throw SamplerError("posterior_median: empty draws");
  }
  auto v = draws.pooled(p);
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double posterior_median(const PosteriorDraws& draws, const std::string& name) {
  return posterior_median(draws, draws.param_index(name));
}

//! Monte Carlo standard error of the mean, sd / sqrt(ESS).
inline double mcse(const PosteriorDraws& draws, int p) {
  auto v = draws.pooled(p);
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size() - 1);
  double e = ess(draws, p);
  if (e <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(var / e);
}

}  // namespace bmtm
