#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmtm/fit.hpp"
#include "bmtm/eval.hpp"
#include "bmtm/sampler.hpp"
#include "bmtm/simgen.hpp"

namespace bmtm {

//! Malformed or out-of-domain input data (CSV/JSON).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using json = nlohmann::json;

namespace detail {

//! Full-precision decimal rendering: 17 significant digits round-trip any
//! finite double exactly, so re-reading and re-writing is byte-identical.
inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
    out.back().pop_back();
  }
  return out;
}

inline double parse_double(const std::string& s, std::size_t row,
                           const std::string& col) {
  const char* c = s.c_str();
  char* end = nullptr;
  double v = std::strtod(c, &end);
  if (end == c || *end != '\0') {
    throw DataError("row " + std::to_string(row) + ": non-numeric value '" + s +
                    "' in column '" + col + "'");
  }
  return v;
}

inline int parse_int(const std::string& s, std::size_t row,
                     const std::string& col) {
  double v = parse_double(s, row, col);
  if (v != std::floor(v) || std::fabs(v) > 1e9) {
    throw DataError("row " + std::to_string(row) + ": column '" + col +
                    "' must be an integer, got '" + s + "'");
  }
  return static_cast<int>(v);
}

}  // namespace detail

//! Grouping of observations into prior-spending bands: band_width-wide tiers
//! top-coded at top_code (e.g. 10,000-unit tiers top-coded at 200,000 give
//! 21 bands, 0 through 20).
struct BandSpec {
  std::string column = "prev_spend";
  double band_width = 10000.0;
  double top_code = 200000.0;

  void validate() const {
    if (column.empty()) throw ConfigError("band column name must be nonempty");
    if (!(band_width > 0.0)) throw ConfigError("band width must be positive");
    if (!(top_code >= band_width)) {
      throw ConfigError("top code must be at least one band width");
    }
  }

  int n_bands() const {
    return static_cast<int>(std::floor(top_code / band_width)) + 1;
  }

  int band_of(double v) const {
    if (v < 0.0) throw DataError("band value must be non-negative");
    int band = static_cast<int>(std::floor(v / band_width));
    return std::min(band, n_bands() - 1);
  }
};

struct ReadResult {
  std::vector<Observation> observations;
  std::size_t excluded_zero = 0;  // y == 0 rows dropped (outside the support)
};

//! Reads a headered CSV with column `y` (spending) and optional `group`.
//! When `bands` is given, the group is instead derived from the band column.
//! Negative or non-numeric values raise a row-numbered DataError; y == 0 rows
//! are excluded and counted (spending must be positive). Row numbers are file
//! lines, the header being row 1.
inline ReadResult read_observations(std::istream& in,
                                    const BandSpec* bands = nullptr) {
  if (bands) bands->validate();
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: missing header");
  auto header = detail::split_csv(line);
  int y_col = -1, group_col = -1, band_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "y") y_col = static_cast<int>(i);
    if (header[i] == "group") group_col = static_cast<int>(i);
    if (bands && header[i] == bands->column) band_col = static_cast<int>(i);
  }
  if (y_col < 0) throw DataError("header has no 'y' column");
  if (bands && band_col < 0) {
    throw DataError("header has no '" + bands->column + "' column");
  }

  ReadResult out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    double y = detail::parse_double(fields[static_cast<std::size_t>(y_col)], row, "y");
    if (y < 0.0) {
      throw DataError("row " + std::to_string(row) +
                      ": negative spending value " + detail::fmt(y));
    }
    if (y == 0.0) {
      ++out.excluded_zero;
      continue;
    }
    int group = 0;
    if (bands) {
      double v = detail::parse_double(fields[static_cast<std::size_t>(band_col)],
                                      row, bands->column);
      if (v < 0.0) {
        throw DataError("row " + std::to_string(row) + ": negative value in '" +
                        bands->column + "'");
      }
      group = bands->band_of(v);
    } else if (group_col >= 0) {
      group = detail::parse_int(fields[static_cast<std::size_t>(group_col)], row,
                                "group");
      if (group < 0) {
        throw DataError("row " + std::to_string(row) + ": negative group label");
      }
    }
    out.observations.push_back({y, group});
  }
  return out;
}

inline void write_observations(std::ostream& out,
                               const std::vector<Observation>& obs) {
  out << "y,group\n";
  for (const auto& o : obs) {
    out << detail::fmt(o.y) << ',' << o.group << '\n';
  }
}

// ---------------------------------------------------------------------------
// Posterior draws
// ---------------------------------------------------------------------------

//! Chain-major draws CSV: chain, iteration, then one column per parameter.
inline void write_draws(std::ostream& out, const PosteriorDraws& draws) {
  out << "chain,iteration";
  for (const auto& n : draws.names) out << ',' << n;
  out << '\n';
  for (int c = 0; c < draws.n_chains; ++c) {
    for (int s = 0; s < draws.n_samples; ++s) {
      out << c << ',' << s;
      for (int p = 0; p < draws.dim(); ++p) {
        out << ',' << detail::fmt(draws.at(c, s, p));
      }
      out << '\n';
    }
  }
}

inline PosteriorDraws read_draws(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty draws file");
  auto header = detail::split_csv(line);
  if (header.size() < 3 || header[0] != "chain" || header[1] != "iteration") {
    throw DataError("draws header must start with chain,iteration");
  }
  PosteriorDraws d;
  d.names.assign(header.begin() + 2, header.end());
  std::size_t row = 1;
  int max_chain = -1, max_iter = -1;
  std::vector<double> flat;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": field count mismatch");
    }
    int c = detail::parse_int(fields[0], row, "chain");
    int s = detail::parse_int(fields[1], row, "iteration");
    max_chain = std::max(max_chain, c);
    max_iter = std::max(max_iter, s);
    for (std::size_t p = 2; p < fields.size(); ++p) {
      flat.push_back(detail::parse_double(fields[p], row, header[p]));
    }
  }
  d.n_chains = max_chain + 1;
  d.n_samples = max_iter + 1;
  std::size_t expect = static_cast<std::size_t>(d.n_chains) *
                       static_cast<std::size_t>(d.n_samples) *
                       static_cast<std::size_t>(d.dim());
  if (flat.size() != expect) {
    throw DataError("draws file is ragged: expected a full chain-major grid");
  }
  d.data = std::move(flat);
  d.divergent.assign(static_cast<std::size_t>(d.n_chains) *
                         static_cast<std::size_t>(d.n_samples),
                     0);
  return d;
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

inline json hyperparams_to_json(const Hyperparams& h) {
  return json{{"mu_a", h.mu_a},         {"sigma_a", h.sigma_a},
              {"mu_b", h.mu_b},         {"sigma_b", h.sigma_b},
              {"mu_q", h.mu_q},         {"sigma_q", h.sigma_q},
              {"mu_omega", h.mu_omega}, {"sigma_omega", h.sigma_omega},
              {"mu_delta", h.mu_delta}, {"sigma_delta", h.sigma_delta},
              {"mu_pi", h.mu_pi},       {"sigma_pi", h.sigma_pi}};
}

inline Hyperparams hyperparams_from_json(const json& j) {
  Hyperparams h{};
  h.mu_a = j.at("mu_a");
  h.sigma_a = j.at("sigma_a");
  h.mu_b = j.at("mu_b");
  h.sigma_b = j.at("sigma_b");
  h.mu_q = j.at("mu_q");
  h.sigma_q = j.at("sigma_q");
  h.mu_omega = j.at("mu_omega");
  h.sigma_omega = j.at("sigma_omega");
  h.mu_delta = j.at("mu_delta");
  h.sigma_delta = j.at("sigma_delta");
  h.mu_pi = j.at("mu_pi");
  h.sigma_pi = j.at("sigma_pi");
  return h;
}

//! Ground-truth sidecar for a simulated dataset. "att" is the per-group
//! treatment effect; "delta" inside a group is the skew-normal slant.
inline json ground_truth_to_json(const SimulatedData& data) {
  json groups = json::array();
  for (std::size_t g = 0; g < data.truth.params.size(); ++g) {
    const auto& p = data.truth.params[g];
    groups.push_back(json{{"pi", p.pi},
                          {"beta", p.gamma.beta},
                          {"omega", p.gamma.omega},
                          {"delta", p.gamma.delta},
                          {"a", p.theta.a},
                          {"b", p.theta.b},
                          {"q", p.theta.q},
                          {"att", data.truth.delta[g]}});
  }
  return json{{"threshold", data.nk.k},
              {"half_width", data.nk.half_width},
              {"hyperparams", hyperparams_to_json(data.truth.hyper)},
              {"groups", groups},
              {"bunching", data.truth.bunching}};
}

inline SimulatedData ground_truth_from_json(const json& j) {
  SimulatedData out{{},
                    {},
                    NeighborhoodSpec(j.at("threshold").get<double>(),
                                     j.at("half_width").get<double>())};
  out.truth.hyper = hyperparams_from_json(j.at("hyperparams"));
  for (const auto& g : j.at("groups")) {
    out.truth.params.push_back(MixtureParams(
        g.at("pi").get<double>(),
        SkewNormalParams(g.at("beta").get<double>(), g.at("omega").get<double>(),
                         g.at("delta").get<double>()),
        SinghMaddalaParams(g.at("a").get<double>(), g.at("b").get<double>(),
                           g.at("q").get<double>())));
    out.truth.delta.push_back(g.at("att").get<double>());
  }
  if (j.contains("bunching")) {
    out.truth.bunching = j.at("bunching").get<std::vector<std::uint8_t>>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimates & diagnostics
// ---------------------------------------------------------------------------

inline json estimate_to_json(const GroupThresholdEstimate& e) {
  return json{{"group", e.group},
              {"threshold", e.threshold},
              {"point", e.att.point},
              {"hdi_low", e.att.hdi_low},
              {"hdi_high", e.att.hdi_high},
              {"level", e.att.level},
              {"n_draws", e.att.draws.size()},
              {"pi", e.pi_point},
              {"theta_hat", json{{"a", e.theta_hat.a},
                                 {"b", e.theta_hat.b},
                                 {"q", e.theta_hat.q}}},
              {"diagnostics", json{{"max_rhat", e.step2_diag.max_rhat},
                                   {"min_ess", e.step2_diag.min_ess},
                                   {"divergence_rate",
                                    e.step2_diag.divergence_rate}}}};
}

inline json fit_result_to_json(const FitResult& fit, const std::string& model) {
  json estimates = json::array();
  for (const auto& e : fit.estimates) estimates.push_back(estimate_to_json(e));
  json step1 = json::array();
  for (const auto& d : fit.step1_diag) {
    step1.push_back(json{{"max_rhat", d.max_rhat},
                         {"min_ess", d.min_ess},
                         {"divergence_rate", d.divergence_rate}});
  }
  auto overall = fit.overall();
  return json{{"model", model},
              {"estimates", estimates},
              {"step1_diagnostics", step1},
              {"max_rhat", overall.max_rhat},
              {"min_ess", overall.min_ess},
              {"divergence_rate", overall.divergence_rate},
              {"convergence_warning", overall.warn()}};
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

//! Table-1-shaped CSV; interval columns are empty for methods without
//! interval estimates (RDD).
inline void write_eval_report(std::ostream& out, const EvalReport& report) {
  out << "scenario,method,mae,cp,al,is,replications,seed\n";
  for (const auto& m : report.methods) {
    out << report.scenario << ',' << method_name(m.method) << ','
        << detail::fmt(m.mae) << ',';
    if (m.has_intervals) {
      out << detail::fmt(m.cp) << ',' << detail::fmt(m.al) << ','
          << detail::fmt(m.is_score);
    } else {
      out << ",,";
    }
    out << ',' << report.replications << ',' << report.seed << '\n';
  }
}

inline EvalReport read_eval_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty report file");
  if (detail::split_csv(line).size() != 8) {
    throw DataError("unexpected report header");
  }
  EvalReport report;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv(line);
    if (f.size() != 8) {
      throw DataError("row " + std::to_string(row) + ": field count mismatch");
    }
    report.scenario = f[0];
    MethodMetrics m;
    if (f[1] == "RDD") m.method = Method::RDD;
    else if (f[1] == "BMTM") m.method = Method::BMTM;
    else if (f[1] == "HBMTM") m.method = Method::HBMTM;
    else throw DataError("row " + std::to_string(row) + ": unknown method " + f[1]);
    m.mae = detail::parse_double(f[2], row, "mae");
    m.has_intervals = !f[3].empty();
    if (m.has_intervals) {
      m.cp = detail::parse_double(f[3], row, "cp");
      m.al = detail::parse_double(f[4], row, "al");
      m.is_score = detail::parse_double(f[5], row, "is");
    }
    report.replications = detail::parse_int(f[6], row, "replications");
    report.seed = static_cast<std::uint64_t>(
        detail::parse_double(f[7], row, "seed"));
    report.methods.push_back(m);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Prior configuration
// ---------------------------------------------------------------------------

//! Overrides prior hyperparameters from JSON onto the built-in defaults.
//! Each key maps to a [location, scale] pair; unknown keys are rejected so
//! typos do not silently fall back to defaults.
inline PriorConfig priors_from_json(const json& j,
                                    PriorConfig base = PriorConfig::simulation_defaults()) {
  auto set_normal = [](NormalPrior& p, const json& v) {
    p.mean = v.at(0);
    p.sd = v.at(1);
    if (!(p.sd > 0.0)) throw DataError("prior scale must be positive");
  };
  auto set_half = [](HalfNormalPrior& p, const json& v) {
    p.loc = v.at(0);
    p.sd = v.at(1);
    if (!(p.sd > 0.0)) throw DataError("prior scale must be positive");
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (!v.is_array() || v.size() != 2) {
      throw DataError("prior '" + key + "' must be a [location, scale] pair");
    }
    if (key == "log_a") set_normal(base.log_a, v);
    else if (key == "log_b") set_normal(base.log_b, v);
    else if (key == "log_q") set_normal(base.log_q, v);
    else if (key == "omega") set_normal(base.omega, v);
    else if (key == "delta") set_normal(base.delta, v);
    else if (key == "logit_pi") set_normal(base.logit_pi, v);
    else if (key == "beta_free") set_normal(base.beta_free, v);
    else if (key == "mu_a") set_normal(base.mu_a, v);
    else if (key == "mu_b") set_normal(base.mu_b, v);
    else if (key == "mu_q") set_normal(base.mu_q, v);
    else if (key == "sigma_a") set_half(base.sigma_a, v);
    else if (key == "sigma_b") set_half(base.sigma_b, v);
    else if (key == "sigma_q") set_half(base.sigma_q, v);
    else if (key == "mu_pi") set_normal(base.mu_pi, v);
    else if (key == "mu_omega") set_normal(base.mu_omega, v);
    else if (key == "mu_delta") set_normal(base.mu_delta, v);
    else if (key == "sigma_pi") set_half(base.sigma_pi, v);
    else if (key == "sigma_omega") set_half(base.sigma_omega, v);
    else if (key == "sigma_delta") set_half(base.sigma_delta, v);
    else if (key == "sigma_beta") set_half(base.sigma_beta, v);
    else throw DataError("unknown prior key '" + key + "'");
  }
  return base;
}

}  // namespace bmtm
