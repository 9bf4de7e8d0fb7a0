#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmtm/baseline.hpp"
#include "bmtm/fit.hpp"
#include "bmtm/simgen.hpp"

namespace bmtm {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double mae(const std::vector<double>& truth,
                  const std::vector<double>& est) {
  if (truth.empty() || truth.size() != est.size()) {
    throw MetricsError("mae: need equal-length nonempty vectors");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::fabs(truth[i] - est[i]);
  return s / static_cast<double>(truth.size());
}

struct IntervalMetrics {
  double cp;
  double al;
  double is_score;
};

//! CP, AL, and the (1-alpha) interval score over per-group intervals.
inline IntervalMetrics interval_metrics(
    const std::vector<double>& truth,
    const std::vector<std::pair<double, double>>& intervals, double alpha = 0.1) {
  if (truth.empty() || truth.size() != intervals.size()) {
    throw MetricsError("interval_metrics: need equal-length nonempty vectors");
  }
  if (!(alpha > 0.0) || !(alpha < 1.0)) {
    throw MetricsError("interval_metrics: alpha must be in (0, 1)");
  }
  double cp = 0.0, al = 0.0, is = 0.0;
  for (std::size_t g = 0; g < truth.size(); ++g) {
    auto [l, u] = intervals[g];
    if (!(l <= u)) throw MetricsError("interval_metrics: malformed interval");
    double d = truth[g];
    cp += (l <= d && d <= u) ? 1.0 : 0.0;
    al += u - l;
    is += (u - l) + (d < l ? 2.0 / alpha * (l - d) : 0.0) +
          (d > u ? 2.0 / alpha * (d - u) : 0.0);
  }
  double n = static_cast<double>(truth.size());
  return {cp / n, al / n, is / n};
}

enum class Method { RDD, BMTM, HBMTM };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::RDD: return "RDD";
    case Method::BMTM: return "BMTM";
    default: return "HBMTM";
  }
}

struct MethodMetrics {
  Method method = Method::RDD;
  double mae = 0.0;
  double cp = 0.0;
  double al = 0.0;
  double is_score = 0.0;
  bool has_intervals = false;
  int replications_used = 0;
  int failed = 0;
};

struct EvalReport {
  std::string scenario;
  int replications = 0;
  std::uint64_t seed = 0;
  std::vector<MethodMetrics> methods;
};

struct StudyConfig {
  ScenarioConfig scenario;
  int replications = 10;
  std::vector<Method> methods{Method::RDD, Method::BMTM, Method::HBMTM};
  FitConfig bmtm_fit;
  FitConfig hbmtm_fit;
  KdeConfig kde;
  double alpha = 0.1;

  //! Reduced-scale study defaults: 20 groups, light sampler settings, and
  //! a higher acceptance target for the hierarchical fits.
  static StudyConfig desk_defaults(Scenario s, std::uint64_t seed) {
    StudyConfig cfg;
    cfg.scenario.scenario = s;
    cfg.scenario.n_groups = 20;
    cfg.scenario.seed = seed;
    NeighborhoodSpec nk{cfg.scenario.k, cfg.scenario.half_width};
    for (FitConfig* f : {&cfg.bmtm_fit, &cfg.hbmtm_fit}) {
      f->neighborhoods = {nk};
      f->keep_draws = false;
      f->step1_sampler.chains = 2;
      f->step1_sampler.warmup = 400;
      f->step1_sampler.samples = 400;
      f->step2_sampler.chains = 2;
      f->step2_sampler.warmup = 400;
      f->step2_sampler.samples = 400;
    }
    cfg.hbmtm_fit.step1_sampler.target_accept = 0.95;
    cfg.hbmtm_fit.step2_sampler.target_accept = 0.95;
    cfg.kde.range_low = nk.lo();
    cfg.kde.range_high = nk.hi();
    cfg.kde.bandwidth = nk.half_width;
    return cfg;
  }
};

namespace detail {

struct ReplicationOutcome {
  bool ok = false;
  double mae = 0.0;
  IntervalMetrics iv{0.0, 0.0, 0.0};
  std::string error;
  // per-group detail, for estimate-vs-truth plot data
  std::vector<double> truth;
  std::vector<double> est;
  std::vector<std::pair<double, double>> intervals;
};

inline ReplicationOutcome eval_method(Method method, const SimulatedData& data,
                                      const StudyConfig& cfg,
                                      std::uint64_t fit_seed) {
  ReplicationOutcome out;
  try {
    const auto& truth = data.truth.delta;
    if (method == Method::RDD) {
      // RDD has no grouping concept; apply it per group like the others
      auto groups = by_group(data.observations,
                             static_cast<int>(data.truth.params.size()));
      std::vector<double> est;
      for (const auto& g : groups) {
        std::vector<double> ys;
        for (const auto& o : g) ys.push_back(o.y);
        est.push_back(rdd_estimate(ys, data.nk.k, data.nk, cfg.kde));
      }
      out.mae = mae(truth, est);
      out.truth = truth;
      out.est = std::move(est);
      out.ok = true;
      return out;
    }
    FitConfig fc = method == Method::BMTM ? cfg.bmtm_fit : cfg.hbmtm_fit;
    fc.step1_sampler.seed = fit_seed;
    fc.step2_sampler.seed = fit_seed + 1;
    auto fit = method == Method::BMTM ? fit_bmtm(data.observations, fc)
                                      : fit_hbmtm(data.observations, fc);
    std::vector<double> est;
    std::vector<std::pair<double, double>> intervals;
    for (const auto& e : fit.estimates) {
      est.push_back(e.att.point);
      intervals.push_back({e.att.hdi_low, e.att.hdi_high});
    }
    out.mae = mae(truth, est);
    out.iv = interval_metrics(truth, intervals, cfg.alpha);
    out.truth = truth;
    out.est = std::move(est);
    out.intervals = std::move(intervals);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace detail

//! Monte Carlo study: fresh DGP per replication, every requested method fit
//! on the same dataset, metrics averaged over successful replications.
//! Failure of a method in more than 5% of replications aborts the study.
inline EvalReport run_replication_study(
    const StudyConfig& cfg,
    const std::function<void(int, Method, const detail::ReplicationOutcome&)>&
        progress = nullptr) {
  if (cfg.replications < 1) throw MetricsError("need at least 1 replication");
  for (Method m : cfg.methods) {
    if (m != Method::RDD && m != Method::BMTM && m != Method::HBMTM) {
      throw MetricsError("unknown method");
    }
  }
  EvalReport report;
  report.scenario = cfg.scenario.scenario == Scenario::A   ? "A"
                    : cfg.scenario.scenario == Scenario::B ? "B"
                                                           : "custom";
  report.replications = cfg.replications;
  report.seed = cfg.scenario.seed;

  std::vector<std::vector<detail::ReplicationOutcome>> outcomes(
      cfg.methods.size());
  RngStream root(cfg.scenario.seed);
  for (int r = 0; r < cfg.replications; ++r) {
    ScenarioConfig sc = cfg.scenario;
    sc.seed = root.derive(static_cast<std::uint64_t>(r)).seed();
    auto data = simulate(sc);
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      std::uint64_t fit_seed =
          root.derive(1000003ULL + static_cast<std::uint64_t>(r) * 16 + mi).seed();
      auto oc = detail::eval_method(cfg.methods[mi], data, cfg, fit_seed);
      if (progress) progress(r, cfg.methods[mi], oc);
      outcomes[mi].push_back(oc);
    }
  }

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    MethodMetrics mm;
    mm.method = cfg.methods[mi];
    mm.has_intervals = cfg.methods[mi] != Method::RDD;
    double sm = 0.0, scp = 0.0, sal = 0.0, sis = 0.0;
    for (const auto& oc : outcomes[mi]) {
      if (!oc.ok) {
        ++mm.failed;
        continue;
      }
      ++mm.replications_used;
      sm += oc.mae;
      scp += oc.iv.cp;
      sal += oc.iv.al;
      sis += oc.iv.is_score;
    }
    if (mm.failed * 20 > cfg.replications) {
      throw MetricsError(method_name(mm.method) + " failed in more than 5% of "
                         "replications");
    }
    if (mm.replications_used == 0) {
      throw MetricsError(method_name(mm.method) + ": no successful replications");
    }
    double n = static_cast<double>(mm.replications_used);
    mm.mae = sm / n;
    if (mm.has_intervals) {
      mm.cp = scp / n;
      mm.al = sal / n;
      mm.is_score = sis / n;
    }
    report.methods.push_back(mm);
  }
  return report;
}

}  // namespace bmtm
