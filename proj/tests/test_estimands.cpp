#include <doctest.h>

#include <cmath>

#include "bmtm/estimands.hpp"
#include "test_helpers.hpp"

using namespace bmtm;
using namespace bmtm::test;

namespace {

// Monte Carlo oracle: rejection-sample each component into the window and
// difference the conditional means. Returns {estimate, standard error}.
std::pair<double, double> att_mc_oracle(const SkewNormalParams& gamma,
                                        const SinghMaddalaParams& theta,
                                        const NeighborhoodSpec& nk,
                                        std::uint64_t seed, std::size_t n) {
  RngStream rng(seed);
  std::vector<double> f_in, g_in;
  while (f_in.size() < n) {
    for (double y : sn_sample(gamma, rng, 4096)) {
      if (nk.contains(y)) f_in.push_back(y);
    }
  }
  while (g_in.size() < n) {
    for (double y : sm_sample(theta, rng, 4096)) {
      if (nk.contains(y)) g_in.push_back(y);
    }
  }
  double est = mean(f_in) - mean(g_in);
  double se = std::sqrt(variance(f_in) / static_cast<double>(f_in.size()) +
                        variance(g_in) / static_cast<double>(g_in.size()));
  return {est, se};
}

// Composite Simpson's rule, an independent quadrature cross-check.
double simpson(const std::function<double(double)>& f, double lo, double hi,
               int intervals) {
  double h = (hi - lo) / intervals;
  double s = f(lo) + f(hi);
  for (int i = 1; i < intervals; ++i) {
    s += (i % 2 == 1 ? 4.0 : 2.0) * f(lo + i * h);
  }
  return s * h / 3.0;
}

PosteriorDraws make_step2_draws(const std::vector<std::array<double, 3>>& rows) {
  PosteriorDraws d;
  d.n_chains = 1;
  d.n_samples = static_cast<int>(rows.size());
  d.names = {"pi", "omega", "delta"};
  for (const auto& r : rows) {
    d.data.push_back(r[0]);
    d.data.push_back(r[1]);
    d.data.push_back(r[2]);
  }
  return d;
}

}  // namespace

TEST_CASE("att against a Monte Carlo oracle") {
  NeighborhoodSpec nk{50.0, 10.0};
  SinghMaddalaParams theta(3.5, 39.0, 1.5);
  struct Case {
    SkewNormalParams gamma;
    std::uint64_t seed;
  };
  std::vector<Case> cases{
      {{50.0, 3.0, 4.0}, 101},
      {{50.0, 6.0, -2.0}, 102},
      {{50.0, 1.0, 0.5}, 103},
      {{50.0, 8.0, 10.0}, 104},
  };
  for (const auto& c : cases) {
    CAPTURE(c.gamma.omega);
    CAPTURE(c.gamma.delta);
    double got = att(c.gamma, theta, nk);
    auto [mc, se] = att_mc_oracle(c.gamma, theta, nk, c.seed, 400000);
    CHECK(std::fabs(got - mc) < 4.0 * se);
  }
}

TEST_CASE("att against an independent Simpson quadrature") {
  NeighborhoodSpec nk{50.0, 10.0};
  SinghMaddalaParams theta(2.8, 45.0, 1.2);
  SkewNormalParams gamma(50.0, 4.0, 3.0);
  auto cond_mean = [&](const std::function<double(double)>& logpdf) {
    auto f = [&](double y) { return std::exp(logpdf(y)); };
    auto yf = [&](double y) { return y * std::exp(logpdf(y)); };
    return simpson(yf, nk.lo(), nk.hi(), 8192) /
           simpson(f, nk.lo(), nk.hi(), 8192);
  };
  double want = cond_mean([&](double y) { return sn_logpdf(y, gamma); }) -
                cond_mean([&](double y) { return sm_logpdf(y, theta); });
  CHECK(att(gamma, theta, nk) == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("att properties") {
  NeighborhoodSpec nk{50.0, 10.0};
  SinghMaddalaParams theta(3.5, 39.0, 1.5);
  SkewNormalParams gamma(50.0, 3.0, 4.0);

  SUBCASE("pi-invariance is bitwise") {
    MixtureParams lo{0.05, gamma, theta};
    MixtureParams hi{0.95, gamma, theta};
    CHECK(att(lo, nk) == att(hi, nk));
    CHECK(att(lo, nk) == att(gamma, theta, nk));
  }
  SUBCASE("symmetric bunching at the threshold vs right-skewed baseline") {
    // delta = 0 centers the bunching mean at K; att then equals K minus the
    // baseline conditional mean over the window, roughly 47.7 here
    SkewNormalParams sym(50.0, 3.0, 0.0);
    double d = att(sym, theta, nk);
    CHECK(std::fabs(d) < 4.0);
    // strong positive skew pushes the bunching mean right of K
    SkewNormalParams right(50.0, 3.0, 10.0);
    CHECK(att(right, theta, nk) > d);
  }
  SUBCASE("halving the quadrature tolerance barely moves the result") {
    RngStream rng(61);
    for (int i = 0; i < 20; ++i) {
      SkewNormalParams g(50.0, rng.uniform(0.5, 8.0), rng.uniform(-5.0, 10.0));
      SinghMaddalaParams t(rng.uniform(2.0, 5.0), rng.uniform(30.0, 50.0),
                           rng.uniform(0.8, 2.5));
      CHECK(std::fabs(att(g, t, nk, 1e-9) - att(g, t, nk, 5e-10)) < 1e-6);
    }
  }
  SUBCASE("identical conditional means give zero") {
    // difference of a component against itself is structurally zero; build
    // the ratio from the same g used as a fake bunching component
    auto cond_mean = [&](auto logpdf) {
      auto f = [&](double y) { return std::exp(logpdf(y)); };
      auto yf = [&](double y) { return y * std::exp(logpdf(y)); };
      return integrate(yf, nk.lo(), nk.hi(), 1e-10, 1e-300).value /
             integrate(f, nk.lo(), nk.hi(), 1e-10, 1e-300).value;
    };
    double m_f = cond_mean([&](double y) { return sn_logpdf(y, gamma); });
    double m_g = cond_mean([&](double y) { return sm_logpdf(y, theta); });
    CHECK(att(gamma, theta, nk) == doctest::Approx(m_f - m_g).epsilon(1e-9));
  }
  SUBCASE("no bunching mass in the window throws a named error") {
    SkewNormalParams far(50.0, 0.05, 0.0);
    NeighborhoodSpec far_nk{500.0, 10.0};
    CHECK_THROWS_WITH_AS(att(far, theta, far_nk),
                         doctest::Contains("bunching component"), EstimandError);
  }
}

TEST_CASE("posterior_att maps draws and prunes failures") {
  NeighborhoodSpec nk{50.0, 10.0};
  SinghMaddalaParams theta(3.5, 39.0, 1.5);
  SUBCASE("each draw matches a direct att call") {
    auto d = make_step2_draws({{0.3, 3.0, 4.0}, {0.5, 5.0, -1.0}, {0.7, 2.0, 0.0}});
    auto deltas = posterior_att(d, theta, nk, /*fix_beta=*/true);
    REQUIRE(deltas.size() == 3);
    CHECK(deltas[0] == att(SkewNormalParams(50.0, 3.0, 4.0), theta, nk));
    CHECK(deltas[1] == att(SkewNormalParams(50.0, 5.0, -1.0), theta, nk));
    CHECK(deltas[2] == att(SkewNormalParams(50.0, 2.0, 0.0), theta, nk));
  }
  SUBCASE("constant draws give a constant collection") {
    auto d = make_step2_draws(std::vector<std::array<double, 3>>(20, {0.4, 3.0, 2.0}));
    auto deltas = posterior_att(d, theta, nk, true);
    for (double v : deltas) CHECK(v == deltas[0]);
  }
  SUBCASE("chain order does not change the multiset of deltas") {
    PosteriorDraws two;
    two.n_chains = 2;
    two.n_samples = 2;
    two.names = {"pi", "omega", "delta"};
    two.data = {0.3, 3.0, 4.0, 0.5, 5.0, -1.0,   // chain 0
                0.5, 5.0, -1.0, 0.3, 3.0, 4.0};  // chain 1, swapped
    auto deltas = posterior_att(two, theta, nk, true);
    std::sort(deltas.begin(), deltas.end());
    CHECK(deltas[0] == deltas[1]);
    CHECK(deltas[2] == deltas[3]);
  }
  SUBCASE("free beta uses the beta column") {
    PosteriorDraws d;
    d.n_chains = 1;
    d.n_samples = 1;
    d.names = {"pi", "beta", "omega", "delta"};
    d.data = {0.4, 48.0, 3.0, 4.0};
    auto deltas = posterior_att(d, theta, nk, /*fix_beta=*/false);
    REQUIRE(deltas.size() == 1);
    CHECK(deltas[0] == att(SkewNormalParams(48.0, 3.0, 4.0), theta, nk));
  }
  SUBCASE("isolated invalid draws are dropped") {
    std::vector<std::array<double, 3>> rows(200, {0.3, 3.0, 4.0});
    rows[17] = {0.3, -1.0, 4.0};  // invalid omega
    auto deltas = posterior_att(make_step2_draws(rows), theta, nk, true);
    CHECK(deltas.size() == 199);
  }
  SUBCASE("more than 1% failures is an aggregate error") {
    std::vector<std::array<double, 3>> rows(100, {0.3, 3.0, 4.0});
    for (int i = 0; i < 5; ++i) rows[static_cast<std::size_t>(i)] = {0.3, -1.0, 4.0};
    CHECK_THROWS_AS(posterior_att(make_step2_draws(rows), theta, nk, true),
                    EstimandError);
  }
}

TEST_CASE("hdi") {
  SUBCASE("standard normal draws recover the symmetric interval") {
    RngStream rng(55);
    std::vector<double> xs;
    for (int i = 0; i < 200000; ++i) xs.push_back(rng.normal());
    auto [lo, hi] = hdi(xs, 0.9);
    // HDI of a symmetric unimodal density is the equal-tailed interval
    CHECK(lo == doctest::Approx(-1.6449).epsilon(0.02));
    CHECK(hi == doctest::Approx(1.6449).epsilon(0.02));
  }
  SUBCASE("exponential draws give a left-anchored interval") {
    RngStream rng(56);
    std::vector<double> xs;
    for (int i = 0; i < 200000; ++i) xs.push_back(-std::log(rng.uniform()));
    auto [lo, hi] = hdi(xs, 0.9);
    // HDI of Exp(1) at level p is [0, -log(1 - p)]
    CHECK(lo < 0.01);
    CHECK(hi == doctest::Approx(-std::log(0.1)).epsilon(0.02));
  }
  SUBCASE("location-scale equivariance") {
    RngStream rng(57);
    std::vector<double> xs, ys;
    for (int i = 0; i < 5000; ++i) {
      double z = rng.normal();
      xs.push_back(z);
      ys.push_back(3.0 * z + 7.0);
    }
    auto [alo, ahi] = hdi(xs, 0.8);
    auto [blo, bhi] = hdi(ys, 0.8);
    CHECK(blo == doctest::Approx(3.0 * alo + 7.0).epsilon(1e-12));
    CHECK(bhi == doctest::Approx(3.0 * ahi + 7.0).epsilon(1e-12));
  }
  SUBCASE("all samples equal collapses to a point") {
    std::vector<double> xs(50, 3.25);
    auto [lo, hi] = hdi(xs, 0.9);
    CHECK(lo == 3.25);
    CHECK(hi == 3.25);
  }
  SUBCASE("width is monotone in level") {
    RngStream rng(59);
    std::vector<double> xs;
    for (int i = 0; i < 5000; ++i) xs.push_back(rng.normal());
    double prev = 0.0;
    for (double level : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95}) {
      auto [lo, hi] = hdi(xs, level);
      CHECK(hi - lo >= prev);
      prev = hi - lo;
    }
  }
  SUBCASE("input validation") {
    std::vector<double> few{1, 2, 3};
    CHECK_THROWS_AS(hdi(few, 0.9), EstimandError);
    std::vector<double> ok(20, 0.0);
    for (std::size_t i = 0; i < ok.size(); ++i) ok[i] = static_cast<double>(i);
    CHECK_THROWS_AS(hdi(ok, 0.0), EstimandError);
    CHECK_THROWS_AS(hdi(ok, 1.0), EstimandError);
  }
  SUBCASE("small exact case") {
    // 10 points, level 0.5 -> 5 points; tightest run is 4.0..4.4
    std::vector<double> xs{0.0, 1.0, 2.0, 3.0, 4.0, 4.1, 4.2, 4.3, 4.4, 9.0};
    auto [lo, hi] = hdi(xs, 0.5);
    CHECK(lo == 4.0);
    CHECK(hi == 4.4);
  }
}

TEST_CASE("summarize_att") {
  std::vector<double> draws;
  RngStream rng(58);
  for (int i = 0; i < 20000; ++i) draws.push_back(2.0 + 0.5 * rng.normal());
  auto est = summarize_att(draws, 0.9, PointEstimate::mean);
  CHECK(est.point == doctest::Approx(2.0).epsilon(0.01));
  CHECK(est.hdi_low == doctest::Approx(2.0 - 0.5 * 1.6449).epsilon(0.03));
  CHECK(est.hdi_high == doctest::Approx(2.0 + 0.5 * 1.6449).epsilon(0.03));
  auto med = summarize_att(draws, 0.9, PointEstimate::median);
  CHECK(med.point == doctest::Approx(2.0).epsilon(0.01));
  CHECK(est.draws.size() == 20000);
}

TEST_CASE("endpoint_density matches direct evaluation") {
  NeighborhoodSpec nk{50.0, 10.0};
  auto d = make_step2_draws({{0.3, 3.0, 4.0}, {0.6, 2.0, -1.0}});
  auto eps = endpoint_density(d, nk, true);
  REQUIRE(eps.size() == 2);
  SkewNormalParams g0(50.0, 3.0, 4.0);
  CHECK(eps[0].at_lower == std::exp(sn_logpdf(40.0, g0)));
  CHECK(eps[0].at_upper == std::exp(sn_logpdf(60.0, g0)));
  // a tight bunching component is negligible at the window edges
  auto tight = make_step2_draws({{0.3, 1.0, 0.0}});
  auto te = endpoint_density(tight, nk, true);
  double peak = std::exp(sn_logpdf(50.0, SkewNormalParams(50.0, 1.0, 0.0)));
  CHECK(te[0].at_lower < 1e-3 * peak);
  CHECK(te[0].at_upper < 1e-3 * peak);
}
