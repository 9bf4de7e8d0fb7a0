#include <doctest.h>

#include <sstream>
#include <string>

#include "bmtm/io.hpp"
#include "test_helpers.hpp"

using namespace bmtm;

namespace {

std::string roundtrip_obs(const std::string& csv) {
  std::istringstream in(csv);
  auto r = read_observations(in);
  std::ostringstream out;
  write_observations(out, r.observations);
  return out.str();
}

}  // namespace

TEST_CASE("read_observations parses y and optional group") {
  SUBCASE("y with group column") {
    std::istringstream in("y,group\n12.5,0\n47,3\n");
    auto r = read_observations(in);
    REQUIRE(r.observations.size() == 2);
    CHECK(r.observations[0].y == 12.5);
    CHECK(r.observations[0].group == 0);
    CHECK(r.observations[1].y == 47.0);
    CHECK(r.observations[1].group == 3);
    CHECK(r.excluded_zero == 0);
  }
  SUBCASE("y only defaults group to 0") {
    std::istringstream in("y\n5\n6\n");
    auto r = read_observations(in);
    REQUIRE(r.observations.size() == 2);
    CHECK(r.observations[1].group == 0);
  }
  SUBCASE("extra columns are ignored, any order") {
    std::istringstream in("id,group,y\nA7,2,33.25\n");
    auto r = read_observations(in);
    REQUIRE(r.observations.size() == 1);
    CHECK(r.observations[0].y == 33.25);
    CHECK(r.observations[0].group == 2);
  }
  SUBCASE("CRLF line endings and blank lines tolerated") {
    std::istringstream in("y,group\r\n12,1\r\n\r\n13,1\r\n");
    auto r = read_observations(in);
    REQUIRE(r.observations.size() == 2);
    CHECK(r.observations[1].y == 13.0);
  }
  SUBCASE("zero spending is excluded and counted") {
    std::istringstream in("y\n5\n0\n0.0\n7\n");
    auto r = read_observations(in);
    CHECK(r.observations.size() == 2);
    CHECK(r.excluded_zero == 2);
  }
}

TEST_CASE("read_observations rejects bad rows with row numbers") {
  auto message_of = [](const std::string& csv) {
    std::istringstream in(csv);
    try {
      read_observations(in);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  SUBCASE("non-numeric y") {
    auto msg = message_of("y\n1\n2\nabc\n");
    CHECK(msg.find("row 4") != std::string::npos);
    CHECK(msg.find("abc") != std::string::npos);
  }
  SUBCASE("negative y") {
    CHECK(message_of("y\n-3.5\n").find("row 2") != std::string::npos);
  }
  SUBCASE("trailing garbage on a number") {
    CHECK(message_of("y\n1.5x\n").find("row 2") != std::string::npos);
  }
  SUBCASE("field count mismatch") {
    CHECK(message_of("y,group\n1,0,9\n").find("row 2") != std::string::npos);
  }
  SUBCASE("non-integer group") {
    CHECK(message_of("y,group\n1,0.5\n").find("row 2") != std::string::npos);
  }
  SUBCASE("negative group") {
    CHECK(message_of("y,group\n1,-1\n").find("row 2") != std::string::npos);
  }
  SUBCASE("missing y column") {
    std::istringstream in("spend\n1\n");
    CHECK_THROWS_AS(read_observations(in), DataError);
  }
  SUBCASE("empty input") {
    std::istringstream in("");
    CHECK_THROWS_AS(read_observations(in), DataError);
  }
}

TEST_CASE("band assignment") {
  BandSpec bands;  // 10,000-wide tiers top-coded at 200,000
  bands.validate();
  CHECK(bands.n_bands() == 21);
  CHECK(bands.band_of(0.0) == 0);
  CHECK(bands.band_of(9999.99) == 0);
  CHECK(bands.band_of(10000.0) == 1);
  CHECK(bands.band_of(199999.0) == 19);
  CHECK(bands.band_of(200000.0) == 20);
  CHECK(bands.band_of(1e9) == 20);
  CHECK_THROWS_AS(bands.band_of(-1.0), DataError);

  SUBCASE("read with band column") {
    std::istringstream in("y,prev_spend\n120,0\n130,15000\n140,250000\n");
    auto r = read_observations(in, &bands);
    REQUIRE(r.observations.size() == 3);
    CHECK(r.observations[0].group == 0);
    CHECK(r.observations[1].group == 1);
    CHECK(r.observations[2].group == 20);
  }
  SUBCASE("band column missing") {
    std::istringstream in("y,group\n1,0\n");
    CHECK_THROWS_AS(read_observations(in, &bands), DataError);
  }
  SUBCASE("negative band value") {
    std::istringstream in("y,prev_spend\n1,-5\n");
    CHECK_THROWS_AS(read_observations(in, &bands), DataError);
  }
  SUBCASE("invalid spec") {
    BandSpec bad = bands;
    bad.band_width = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = bands;
    bad.top_code = 100.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("observations CSV round-trips byte-identically") {
  std::vector<Observation> obs{{0.1, 0},
                               {1.0 / 3.0, 1},
                               {12345.678901234567, 2},
                               {1e-12, 0},
                               {49.999999999999993, 3}};
  std::ostringstream first;
  write_observations(first, obs);
  CHECK(roundtrip_obs(first.str()) == first.str());
  // and the parsed values are exact
  std::istringstream in(first.str());
  auto r = read_observations(in);
  REQUIRE(r.observations.size() == obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    CHECK(r.observations[i].y == obs[i].y);
  }
}

TEST_CASE("draws CSV round-trips") {
  PosteriorDraws d;
  d.n_chains = 2;
  d.n_samples = 3;
  d.names = {"a", "b"};
  RngStream rng(5);
  for (int i = 0; i < 12; ++i) d.data.push_back(rng.normal());
  d.divergent.assign(6, 0);

  std::ostringstream first;
  write_draws(first, d);
  std::istringstream in(first.str());
  auto back = read_draws(in);
  CHECK(back.n_chains == 2);
  CHECK(back.n_samples == 3);
  REQUIRE(back.names == d.names);
  for (int c = 0; c < 2; ++c)
    for (int s = 0; s < 3; ++s)
      for (int p = 0; p < 2; ++p) CHECK(back.at(c, s, p) == d.at(c, s, p));

  std::ostringstream second;
  write_draws(second, back);
  CHECK(second.str() == first.str());

  SUBCASE("ragged file rejected") {
    std::istringstream bad("chain,iteration,a\n0,0,1.5\n0,2,2.5\n");
    CHECK_THROWS_AS(read_draws(bad), DataError);
  }
  SUBCASE("bad header rejected") {
    std::istringstream bad("iter,chain,a\n");
    CHECK_THROWS_AS(read_draws(bad), DataError);
  }
}

TEST_CASE("ground truth JSON round-trips") {
  ScenarioConfig cfg;
  cfg.n_groups = 4;
  cfg.cluster_sizes = {5, 5, 5, 5};
  cfg.seed = 11;
  auto data = simulate(cfg);

  auto j = ground_truth_to_json(data);
  std::string first = j.dump(2);
  auto parsed = json::parse(first);
  CHECK(ground_truth_to_json(ground_truth_from_json(parsed)).dump(2) == first);

  auto back = ground_truth_from_json(parsed);
  CHECK(back.nk.k == data.nk.k);
  CHECK(back.nk.half_width == data.nk.half_width);
  REQUIRE(back.truth.params.size() == 4);
  for (std::size_t g = 0; g < 4; ++g) {
    CHECK(back.truth.params[g].pi == data.truth.params[g].pi);
    CHECK(back.truth.params[g].theta.b == data.truth.params[g].theta.b);
    CHECK(back.truth.delta[g] == data.truth.delta[g]);
  }
  CHECK(back.truth.bunching == data.truth.bunching);
  CHECK(back.truth.hyper.mu_pi == data.truth.hyper.mu_pi);
}

TEST_CASE("fit result JSON carries estimates and diagnostics") {
  FitResult fit;
  GroupThresholdEstimate e;
  e.group = 0;
  e.threshold = 50.0;
  e.att = {4.5, 3.9, 5.1, 0.9, {4.4, 4.5, 4.6}};
  e.pi_point = 0.25;
  e.theta_hat = SinghMaddalaParams(3.5, 39.0, 1.5);
  e.step2_diag = {1.01, 250.0, 0.0};
  fit.estimates.push_back(e);
  fit.theta_hat.push_back(e.theta_hat);
  fit.step1_diag.push_back({1.12, 80.0, 0.0});

  auto j = fit_result_to_json(fit, "bmtm");
  CHECK(j["model"] == "bmtm");
  REQUIRE(j["estimates"].size() == 1);
  CHECK(j["estimates"][0]["point"] == 4.5);
  CHECK(j["estimates"][0]["n_draws"] == 3);
  CHECK(j["estimates"][0]["theta_hat"]["b"] == 39.0);
  CHECK(j["max_rhat"] == 1.12);  // overall picks up the step-1 rhat
  CHECK(j["convergence_warning"] == true);
  // parse/dump of the serialized form is byte-identical
  std::string s = j.dump(2);
  CHECK(json::parse(s).dump(2) == s);
}

TEST_CASE("eval report CSV round-trips with empty RDD intervals") {
  EvalReport report;
  report.scenario = "A";
  report.replications = 10;
  report.seed = 99;
  MethodMetrics rdd;
  rdd.method = Method::RDD;
  rdd.mae = 3.31;
  rdd.has_intervals = false;
  MethodMetrics hb;
  hb.method = Method::HBMTM;
  hb.mae = 1.0 / 3.0;
  hb.cp = 0.9;
  hb.al = 1.25;
  hb.is_score = 1.5;
  hb.has_intervals = true;
  report.methods = {rdd, hb};

  std::ostringstream first;
  write_eval_report(first, report);
  std::istringstream in(first.str());
  auto back = read_eval_report(in);
  CHECK(back.scenario == "A");
  CHECK(back.replications == 10);
  CHECK(back.seed == 99);
  REQUIRE(back.methods.size() == 2);
  CHECK(back.methods[0].has_intervals == false);
  CHECK(back.methods[1].mae == hb.mae);
  CHECK(back.methods[1].is_score == 1.5);

  std::ostringstream second;
  write_eval_report(second, back);
  CHECK(second.str() == first.str());
}

TEST_CASE("priors_from_json overrides onto defaults") {
  auto p = priors_from_json(json::parse(
      R"({"log_q": [2.0, 0.5], "sigma_beta": [0.0, 10.0], "mu_b": [5.0, 1.0]})"));
  CHECK(p.log_q.mean == 2.0);
  CHECK(p.log_q.sd == 0.5);
  CHECK(p.sigma_beta.sd == 10.0);
  CHECK(p.mu_b.mean == 5.0);
  // untouched keys keep the built-in defaults
  auto def = PriorConfig::simulation_defaults();
  CHECK(p.log_a.mean == def.log_a.mean);
  CHECK(p.omega.sd == def.omega.sd);

  CHECK_THROWS_AS(priors_from_json(json::parse(R"({"log_z": [0, 1]})")), DataError);
  CHECK_THROWS_AS(priors_from_json(json::parse(R"({"log_a": [0]})")), DataError);
  CHECK_THROWS_AS(priors_from_json(json::parse(R"({"log_a": [0, -1]})")), DataError);
  CHECK_THROWS_AS(priors_from_json(json::parse(R"({"log_a": 3})")), DataError);
}
