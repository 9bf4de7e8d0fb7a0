// bmtm: simulate, fit, and evaluate Bayesian bunching mixture models.
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bmtm/eval.hpp"
#include "bmtm/fit.hpp"
#include "bmtm/io.hpp"
#include "bmtm/simgen.hpp"

namespace fs = std::filesystem;
using namespace bmtm;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file " + path.string());
  return out;
}

//! Fills options the user did not pass on the command line from a JSON
//! config file; built-in defaults apply last. Keys are the long option
//! names without the leading dashes.
struct ConfigFallback {
  CLI::App* cmd = nullptr;
  json cfg = json::object();

  template <class T>
  void operator()(const std::string& flag, T& var) const {
    if (!cmd || cmd->count(flag) > 0) return;
    std::string key = flag.substr(2);
    if (cfg.contains(key)) var = cfg.at(key).get<T>();
  }
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw DataError("config file must hold a JSON object");
  return j;
}

Scenario parse_scenario(const std::string& s) {
  if (s == "A" || s == "a") return Scenario::A;
  if (s == "B" || s == "b") return Scenario::B;
  throw ConfigError("unknown scenario '" + s + "' (expected A or B)");
}

std::vector<NeighborhoodSpec> build_neighborhoods(
    const std::vector<double>& thresholds, std::vector<double> half_widths) {
  if (thresholds.empty()) throw ConfigError("at least one threshold required");
  if (half_widths.size() == 1 && thresholds.size() > 1) {
    half_widths.assign(thresholds.size(), half_widths[0]);
  }
  if (half_widths.size() != thresholds.size()) {
    throw ConfigError("need one half-width, or one per threshold");
  }
  std::vector<NeighborhoodSpec> nks;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    nks.emplace_back(thresholds[i], half_widths[i]);
  }
  return validate_neighborhoods(nks);
}

std::string fmt(double x) { return detail::fmt(x); }

// -------------------------------------------------------------------------
// simulate
// -------------------------------------------------------------------------

struct SimulateOpts {
  std::string scenario = "A";
  int groups = 100;
  std::vector<int> cluster_sizes{50, 100, 200, 300};
  double threshold = 50.0;
  double half_width = 10.0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config;
};

int cmd_simulate(const SimulateOpts& o) {
  ScenarioConfig cfg;
  cfg.scenario = parse_scenario(o.scenario);
  cfg.n_groups = o.groups;
  cfg.cluster_sizes = o.cluster_sizes;
  cfg.k = o.threshold;
  cfg.half_width = o.half_width;
  cfg.seed = o.seed;
  auto data = simulate(cfg);

  fs::create_directories(o.out_dir);
  auto obs_path = fs::path(o.out_dir) / "observations.csv";
  auto truth_path = fs::path(o.out_dir) / "truth.json";
  {
    auto out = open_out(obs_path);
    write_observations(out, data.observations);
  }
  {
    auto out = open_out(truth_path);
    out << ground_truth_to_json(data).dump(2) << '\n';
  }

  std::size_t n_bunch = 0;
  for (auto z : data.truth.bunching) n_bunch += z;
  double mean_att = 0.0;
  for (double d : data.truth.delta) mean_att += d;
  mean_att /= static_cast<double>(data.truth.delta.size());
  std::cout << "scenario " << o.scenario << ", " << cfg.n_groups << " groups, "
            << data.observations.size() << " observations (" << n_bunch
            << " bunching), threshold " << fmt(cfg.k) << " +/- "
            << fmt(cfg.half_width) << ", mean group ATT " << fmt(mean_att)
            << "\nwrote " << obs_path.string() << ", " << truth_path.string()
            << '\n';
  return 0;
}

// -------------------------------------------------------------------------
// fit
// -------------------------------------------------------------------------

struct FitOpts {
  std::string input;
  std::string model = "hbmtm";
  std::vector<double> thresholds{50.0};
  std::vector<double> half_widths{10.0};
  std::string band_column;
  double band_width = 10000.0;
  double top_code = 200000.0;
  std::string prior_mode = "simulation";
  std::string priors_file;
  bool free_beta = false;
  std::string point_estimate = "mean";
  double hdi_level = 0.9;
  int chains = 4;
  int warmup = 3000;
  int samples = 3000;
  double target_accept = -1.0;  // <0: model-dependent default
  int max_tree_depth = 10;
  int threads = 0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config;
};

//! Window-conditional mixture density and its components at y: scaled so
//! the mixture integrates to 1 over N_K, matching a density-normalized
//! histogram of the inside data.
struct WindowDensity {
  double pi;
  SkewNormalParams gamma;
  SinghMaddalaParams theta;
  double mass;  // pi * F(N_K) + (1 - pi) * W(N_K)

  WindowDensity(double pi_, SkewNormalParams g, SinghMaddalaParams t,
                const NeighborhoodSpec& nk)
      : pi(pi_), gamma(g), theta(t) {
    double f = 0.0;
    std::array<double, 3> unused{};
    sn_window_mass_grad(gamma, nk, f, unused);
    double w = sm_cdf(nk.hi(), theta) - sm_cdf(nk.lo(), theta);
    mass = pi * f + (1.0 - pi) * w;
    if (!(mass > 0.0)) throw EstimandError("fitted mixture has no window mass");
  }

  double bunching(double y) const {
    return pi * std::exp(sn_logpdf(y, gamma)) / mass;
  }
  double nonbunching(double y) const {
    return (1.0 - pi) * std::exp(sm_logpdf(y, theta)) / mass;
  }
};

void write_density_grid(std::ostream& out, const WindowDensity& d,
                        const NeighborhoodSpec& nk, int points = 201) {
  out << "y,bunching,nonbunching,mixture\n";
  for (int i = 0; i < points; ++i) {
    double y = nk.lo() + (nk.hi() - nk.lo()) * i / (points - 1);
    double f = d.bunching(y), g = d.nonbunching(y);
    out << fmt(y) << ',' << fmt(f) << ',' << fmt(g) << ',' << fmt(f + g)
        << '\n';
  }
}

void write_histogram(std::ostream& out, const std::vector<double>& ys,
                     const NeighborhoodSpec& nk, int bins = 30) {
  out << "bin_low,bin_high,density\n";
  double width = (nk.hi() - nk.lo()) / bins;
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double y : ys) {
    int b = std::min(bins - 1,
                     static_cast<int>(std::floor((y - nk.lo()) / width)));
    counts[static_cast<std::size_t>(std::max(0, b))]++;
  }
  double n = static_cast<double>(ys.size());
  for (int b = 0; b < bins; ++b) {
    double d = n > 0 ? counts[static_cast<std::size_t>(b)] / (n * width) : 0.0;
    out << fmt(nk.lo() + b * width) << ',' << fmt(nk.lo() + (b + 1) * width)
        << ',' << fmt(d) << '\n';
  }
}

void write_nonbunching_curves(std::ostream& out,
                              const std::vector<SinghMaddalaParams>& thetas,
                              double y_max, int points = 400) {
  out << "y";
  for (std::size_t g = 0; g < thetas.size(); ++g) out << ",group" << g;
  out << '\n';
  for (int i = 1; i <= points; ++i) {
    double y = y_max * i / points;
    out << fmt(y);
    for (const auto& t : thetas) out << ',' << fmt(std::exp(sm_logpdf(y, t)));
    out << '\n';
  }
}

int cmd_fit(const FitOpts& o) {
  if (o.input.empty()) throw ConfigError("fit requires --input");
  if (o.model != "bmtm" && o.model != "hbmtm") {
    throw ConfigError("unknown model '" + o.model + "' (expected bmtm or hbmtm)");
  }
  const bool hier = o.model == "hbmtm";

  std::ifstream in(o.input);
  if (!in) throw DataError("cannot open input file " + o.input);
  ReadResult data;
  if (!o.band_column.empty()) {
    BandSpec bands{o.band_column, o.band_width, o.top_code};
    data = read_observations(in, &bands);
  } else {
    data = read_observations(in);
  }
  if (data.excluded_zero > 0) {
    std::cerr << "excluded " << data.excluded_zero
              << " rows with zero spending (outside the model support)\n";
  }

  FitConfig cfg;
  cfg.neighborhoods = build_neighborhoods(o.thresholds, o.half_widths);
  if (o.prior_mode == "simulation") {
    cfg.priors = PriorConfig::simulation_defaults();
  } else if (o.prior_mode == "application") {
    cfg.priors = PriorConfig::application_defaults();
  } else {
    throw ConfigError("unknown prior mode '" + o.prior_mode + "'");
  }
  if (!o.priors_file.empty()) {
    cfg.priors = priors_from_json(load_config(o.priors_file), cfg.priors);
  }
  cfg.fix_beta = !o.free_beta;
  if (o.point_estimate == "mean") cfg.point_estimate = PointEstimate::mean;
  else if (o.point_estimate == "median") cfg.point_estimate = PointEstimate::median;
  else throw ConfigError("point estimate must be mean or median");
  cfg.hdi_level = o.hdi_level;
  cfg.step1_sampler.chains = o.chains;
  cfg.step1_sampler.warmup = o.warmup;
  cfg.step1_sampler.samples = o.samples;
  cfg.step1_sampler.max_tree_depth = o.max_tree_depth;
  cfg.step1_sampler.threads = o.threads;
  cfg.step1_sampler.target_accept =
      o.target_accept > 0.0 ? o.target_accept : (hier ? 0.95 : 0.8);
  cfg.step2_sampler = cfg.step1_sampler;
  cfg.step1_sampler.seed = o.seed;
  cfg.step2_sampler.seed = o.seed + 1;
  cfg.keep_draws = true;

  auto fit = hier ? fit_hbmtm(data.observations, cfg)
                  : fit_bmtm(data.observations, cfg);
  auto nks = validate_neighborhoods(cfg.neighborhoods);
  const int G = static_cast<int>(fit.theta_hat.size());

  fs::create_directories(o.out_dir);
  fs::path dir(o.out_dir);

  // estimates + diagnostics
  auto j = fit_result_to_json(fit, o.model);
  j["excluded_zero"] = data.excluded_zero;
  j["seed"] = o.seed;
  {
    auto out = open_out(dir / "estimates.json");
    out << j.dump(2) << '\n';
  }
  {
    auto out = open_out(dir / "estimates.csv");
    out << "group,threshold,point,hdi_low,hdi_high\n";
    for (const auto& e : fit.estimates) {
      out << e.group << ',' << fmt(e.threshold) << ',' << fmt(e.att.point)
          << ',' << fmt(e.att.hdi_low) << ',' << fmt(e.att.hdi_high) << '\n';
    }
  }

  // posterior draws
  if (hier) {
    auto out = open_out(dir / "step1_draws.csv");
    write_draws(out, fit.step1_draws[0]);
  } else {
    for (int g = 0; g < G; ++g) {
      auto out = open_out(dir / ("step1_draws_g" + std::to_string(g) + ".csv"));
      write_draws(out, fit.step1_draws[static_cast<std::size_t>(g)]);
    }
  }
  for (std::size_t i = 0; i < fit.step2_draws.size(); ++i) {
    std::string name =
        hier ? "step2_draws_k" + std::to_string(static_cast<long long>(nks[i].k))
             : "step2_draws_g" + std::to_string(static_cast<int>(i / nks.size())) +
                   "_k" +
                   std::to_string(static_cast<long long>(nks[i % nks.size()].k));
    auto out = open_out(dir / (name + ".csv"));
    write_draws(out, fit.step2_draws[i]);
  }

  // plot data: per-estimate fitted densities over the window + histogram
  auto part = partition(data.observations, nks);
  for (const auto& e : fit.estimates) {
    std::size_t m = 0;
    while (nks[m].k != e.threshold) ++m;
    const auto& d2 = hier ? fit.step2_draws[m]
                          : fit.step2_draws[static_cast<std::size_t>(e.group) *
                                                nks.size() +
                                            m];
    auto tag = hier ? "[" + std::to_string(e.group) + "]" : "";
    auto point = [&](const std::string& base) {
      return bmtm::detail::point_of(d2.pooled(d2.param_index(base + tag)),
                                    cfg.point_estimate);
    };
    double beta = cfg.fix_beta ? e.threshold : point("beta");
    SkewNormalParams gamma(beta, point("omega"), point("delta"));
    WindowDensity wd(e.pi_point, gamma, e.theta_hat, nks[m]);

    std::string suffix = "g" + std::to_string(e.group) + "_k" +
                         std::to_string(static_cast<long long>(e.threshold));
    {
      auto out = open_out(dir / ("density_" + suffix + ".csv"));
      write_density_grid(out, wd, nks[m]);
    }
    std::vector<double> ys;
    for (const auto& obs : part.inside[m]) {
      if (obs.group == e.group) ys.push_back(obs.y);
    }
    auto out = open_out(dir / ("histogram_" + suffix + ".csv"));
    write_histogram(out, ys, nks[m]);
  }
  {
    auto out = open_out(dir / "nonbunching_curves.csv");
    write_nonbunching_curves(out, fit.theta_hat, 1.5 * nks.back().hi());
  }

  auto overall = fit.overall();
  std::cout << o.model << " fit: " << G << " groups x " << nks.size()
            << " thresholds; max R-hat " << fmt(overall.max_rhat)
            << ", min ESS " << fmt(overall.min_ess) << ", divergence rate "
            << fmt(overall.divergence_rate) << "\nwrote results to "
            << dir.string() << '\n';
  if (overall.warn()) {
    std::cerr << "warning: convergence diagnostics exceed thresholds "
                 "(R-hat > 1.05 or divergence rate > 10%); "
                 "inspect estimates.json\n";
  }
  return 0;
}

// -------------------------------------------------------------------------
// evaluate
// -------------------------------------------------------------------------

struct EvalOpts {
  std::string scenario = "A";
  int replications = 10;
  int groups = 20;
  std::vector<std::string> methods{"rdd", "bmtm", "hbmtm"};
  std::uint64_t seed = 0;
  double alpha = 0.1;
  int chains = 2;
  int warmup = 400;
  int samples = 400;
  std::string out_dir = ".";
  std::string config;
  bool quiet = false;
};

int cmd_evaluate(const EvalOpts& o) {
  auto cfg = StudyConfig::desk_defaults(parse_scenario(o.scenario), o.seed);
  cfg.replications = o.replications;
  cfg.scenario.n_groups = o.groups;
  cfg.alpha = o.alpha;
  cfg.methods.clear();
  for (const auto& m : o.methods) {
    if (m == "rdd") cfg.methods.push_back(Method::RDD);
    else if (m == "bmtm") cfg.methods.push_back(Method::BMTM);
    else if (m == "hbmtm") cfg.methods.push_back(Method::HBMTM);
    else throw ConfigError("unknown method '" + m + "'");
  }
  if (cfg.methods.empty()) throw ConfigError("no methods selected");
  for (FitConfig* f : {&cfg.bmtm_fit, &cfg.hbmtm_fit}) {
    for (SamplerConfig* s : {&f->step1_sampler, &f->step2_sampler}) {
      s->chains = o.chains;
      s->warmup = o.warmup;
      s->samples = o.samples;
    }
  }

  // capture the first replication's per-group detail for plot data
  std::vector<bmtm::detail::ReplicationOutcome> first(cfg.methods.size());
  auto progress = [&](int r, Method m, const bmtm::detail::ReplicationOutcome& oc) {
    std::size_t mi = 0;
    while (cfg.methods[mi] != m) ++mi;
    if (r == 0) first[mi] = oc;
    if (!o.quiet) {
      std::cerr << "replication " << r + 1 << "/" << cfg.replications << " "
                << method_name(m) << ": "
                << (oc.ok ? "mae " + fmt(oc.mae) : "failed: " + oc.error)
                << '\n';
    }
  };
  auto report = run_replication_study(cfg, progress);

  fs::create_directories(o.out_dir);
  fs::path dir(o.out_dir);
  {
    auto out = open_out(dir / "report.csv");
    write_eval_report(out, report);
  }
  // estimate-vs-truth plot data, first replication, sorted by group index
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    if (!first[mi].ok) continue;
    auto out = open_out(dir / ("estimates_vs_truth_" +
                               method_name(cfg.methods[mi]) + ".csv"));
    out << "group,truth,estimate,hdi_low,hdi_high\n";
    for (std::size_t g = 0; g < first[mi].est.size(); ++g) {
      out << g << ',' << fmt(first[mi].truth[g]) << ',' << fmt(first[mi].est[g]);
      if (!first[mi].intervals.empty()) {
        out << ',' << fmt(first[mi].intervals[g].first) << ','
            << fmt(first[mi].intervals[g].second);
      } else {
        out << ",,";
      }
      out << '\n';
    }
  }

  std::ostringstream table;
  write_eval_report(table, report);
  std::cout << table.str() << "wrote " << (dir / "report.csv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian bunching mixture models: causal effects of spending "
               "thresholds"};
  app.require_subcommand(1);

  SimulateOpts so;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  sim->add_option("--scenario", so.scenario, "Scenario (A or B)");
  sim->add_option("--groups", so.groups, "Number of groups");
  sim->add_option("--cluster-sizes", so.cluster_sizes,
                  "Per-cluster sample sizes");
  sim->add_option("--threshold", so.threshold, "Spending threshold K");
  sim->add_option("--half-width", so.half_width, "Neighborhood half-width");
  sim->add_option("--seed", so.seed, "RNG seed");
  sim->add_option("--out-dir", so.out_dir, "Output directory");
  sim->add_option("--config", so.config, "JSON config file");

  FitOpts fo;
  auto* fit = app.add_subcommand("fit", "Fit BMTM or HBMTM to a dataset");
  fit->add_option("--input", fo.input, "Observations CSV");
  fit->add_option("--model", fo.model, "Model (bmtm or hbmtm)");
  fit->add_option("--threshold", fo.thresholds, "Threshold(s) K");
  fit->add_option("--half-width", fo.half_widths,
                  "Half-width(s), one or one per threshold");
  fit->add_option("--band-column", fo.band_column,
                  "Derive groups from this column's spending bands");
  fit->add_option("--band-width", fo.band_width, "Band width");
  fit->add_option("--top-code", fo.top_code, "Band top code");
  fit->add_option("--prior-mode", fo.prior_mode,
                  "Built-in prior set (simulation or application)");
  fit->add_option("--priors", fo.priors_file, "JSON prior overrides");
  fit->add_flag("--free-beta", fo.free_beta,
                "Estimate the bunching location instead of fixing it at K");
  fit->add_option("--point-estimate", fo.point_estimate, "mean or median");
  fit->add_option("--hdi-level", fo.hdi_level, "HDI probability mass");
  fit->add_option("--chains", fo.chains, "MCMC chains");
  fit->add_option("--warmup", fo.warmup, "Warmup iterations per chain");
  fit->add_option("--samples", fo.samples, "Sampling iterations per chain");
  fit->add_option("--target-accept", fo.target_accept,
                  "NUTS target acceptance rate");
  fit->add_option("--max-tree-depth", fo.max_tree_depth, "NUTS max tree depth");
  fit->add_option("--threads", fo.threads, "Thread cap (0 = auto)");
  fit->add_option("--seed", fo.seed, "RNG seed");
  fit->add_option("--out-dir", fo.out_dir, "Output directory");
  fit->add_option("--config", fo.config, "JSON config file");

  EvalOpts eo;
  auto* ev = app.add_subcommand(
      "evaluate", "Replication study comparing RDD, BMTM, and HBMTM");
  ev->add_option("--scenario", eo.scenario, "Scenario (A or B)");
  ev->add_option("--replications", eo.replications, "Monte Carlo replications");
  ev->add_option("--groups", eo.groups, "Groups per replication");
  ev->add_option("--methods", eo.methods, "Subset of rdd,bmtm,hbmtm");
  ev->add_option("--seed", eo.seed, "RNG seed");
  ev->add_option("--alpha", eo.alpha, "Interval score alpha");
  ev->add_option("--chains", eo.chains, "MCMC chains");
  ev->add_option("--warmup", eo.warmup, "Warmup iterations per chain");
  ev->add_option("--samples", eo.samples, "Sampling iterations per chain");
  ev->add_option("--out-dir", eo.out_dir, "Output directory");
  ev->add_option("--config", eo.config, "JSON config file");
  ev->add_flag("--quiet", eo.quiet, "Suppress per-replication progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (sim->parsed()) {
      ConfigFallback fb{sim, load_config(so.config)};
      fb("--scenario", so.scenario);
      fb("--groups", so.groups);
      fb("--cluster-sizes", so.cluster_sizes);
      fb("--threshold", so.threshold);
      fb("--half-width", so.half_width);
      fb("--seed", so.seed);
      fb("--out-dir", so.out_dir);
      return cmd_simulate(so);
    }
    if (fit->parsed()) {
      ConfigFallback fb{fit, load_config(fo.config)};
      fb("--input", fo.input);
      fb("--model", fo.model);
      fb("--threshold", fo.thresholds);
      fb("--half-width", fo.half_widths);
      fb("--band-column", fo.band_column);
      fb("--band-width", fo.band_width);
      fb("--top-code", fo.top_code);
      fb("--prior-mode", fo.prior_mode);
      fb("--priors", fo.priors_file);
      fb("--free-beta", fo.free_beta);
      fb("--point-estimate", fo.point_estimate);
      fb("--hdi-level", fo.hdi_level);
      fb("--chains", fo.chains);
      fb("--warmup", fo.warmup);
      fb("--samples", fo.samples);
      fb("--target-accept", fo.target_accept);
      fb("--max-tree-depth", fo.max_tree_depth);
      fb("--threads", fo.threads);
      fb("--seed", fo.seed);
      fb("--out-dir", fo.out_dir);
      return cmd_fit(fo);
    }
    ConfigFallback fb{ev, load_config(eo.config)};
    fb("--scenario", eo.scenario);
    fb("--replications", eo.replications);
    fb("--groups", eo.groups);
    fb("--methods", eo.methods);
    fb("--seed", eo.seed);
    fb("--alpha", eo.alpha);
    fb("--chains", eo.chains);
    fb("--warmup", eo.warmup);
    fb("--samples", eo.samples);
    fb("--out-dir", eo.out_dir);
    return cmd_evaluate(eo);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const FitError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}
