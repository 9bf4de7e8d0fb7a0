#include <doctest.h>

#include <cmath>

#include "bmtm/model.hpp"
#include "bmtm/quadrature.hpp"
#include "test_helpers.hpp"

using namespace bmtm;
using namespace bmtm::test;

namespace {

double model_value(const PosteriorModel& m, std::vector<double> x) {
  std::vector<double> g(static_cast<std::size_t>(m.dim()));
  return m.value_grad(x, g);
}

//! Checks analytic gradient against central finite differences at x. The
//! comparison scale includes the gradient norm and the FD cancellation noise
//! floor eps*|v|/h, so near-zero components of a large objective don't fail
//! on roundoff alone.
void check_gradient(const PosteriorModel& m, const std::vector<double>& x,
                    double tol = 1e-5) {
  std::vector<double> g(static_cast<std::size_t>(m.dim()));
  double v0 = m.value_grad(x, g);
  REQUIRE(std::isfinite(v0));
  double gnorm = 0.0;
  for (double gi : g) gnorm = std::max(gnorm, std::fabs(gi));
  for (int i = 0; i < m.dim(); ++i) {
    auto f = [&](double xi) {
      auto xp = x;
      xp[static_cast<std::size_t>(i)] = xi;
      return model_value(m, xp);
    };
    double h = 1e-6 * std::max(1.0, std::fabs(x[static_cast<std::size_t>(i)]));
    double fd = fd_derivative(f, x[static_cast<std::size_t>(i)], 1e-6);
    double noise = 1e-15 * std::fabs(v0) / h;
    double got = g[static_cast<std::size_t>(i)];
    double scale = std::max({std::fabs(got), std::fabs(fd), 1e-3 * gnorm, 1e-10});
    CHECK(std::fabs(got - fd) < tol * scale + 10.0 * noise);
  }
}

std::vector<Observation> make_obs(const std::vector<double>& ys, int group = 0) {
  std::vector<Observation> out;
  for (double y : ys) out.push_back({y, group});
  return out;
}

}  // namespace

TEST_CASE("partition basics") {
  std::vector<NeighborhoodSpec> nks{{30000, 10000}, {50000, 10000}, {70000, 10000}};
  CHECK_THROWS_AS(validate_neighborhoods({{30000, 10000}, {45000, 10000}}),
                  ConfigError);

  auto part = partition(make_obs({45000}), nks);
  CHECK(part.inside[1].size() == 1);  // 45000 belongs to N_50000
  CHECK(part.outside.empty());

  // boundary point: lower edge of N_30000 counts inside
  auto part2 = partition(make_obs({20000}), nks);
  CHECK(part2.inside[0].size() == 1);
  CHECK(part2.outside.empty());

  auto part3 = partition({}, nks);
  CHECK(part3.total() == 0);

  auto part4 = partition(make_obs({5000, 85000, 41000}), nks);
  CHECK(part4.outside.size() == 2);
  CHECK(part4.inside[1].size() == 1);
}

TEST_CASE("partition round trip is the input multiset") {
  RngStream rng(5);
  SinghMaddalaParams p(3.5, 39000.0, 1.5);
  std::vector<Observation> data;
  for (double y : sm_sample(p, rng, 2000)) data.push_back({y, 0});
  std::vector<NeighborhoodSpec> nks{{30000, 10000}, {50000, 10000}, {70000, 10000}};
  auto part = partition(data, nks);

  std::vector<double> all;
  for (const auto& o : part.outside) all.push_back(o.y);
  for (const auto& b : part.inside) {
    for (const auto& o : b) all.push_back(o.y);
  }
  std::vector<double> in;
  for (const auto& o : data) in.push_back(o.y);
  std::sort(all.begin(), all.end());
  std::sort(in.begin(), in.end());
  CHECK(all == in);
  // no observation in two buckets
  CHECK(part.total() == data.size());
}

TEST_CASE("mixture logpdf") {
  SinghMaddalaParams theta(3.5, 39.0, 1.5);
  SkewNormalParams gamma(50.0, 3.0, 4.0);

  SUBCASE("degenerate limits") {
    MixtureParams lo(1e-14, gamma, theta);
    CHECK(mixture_logpdf(45.0, lo) ==
          doctest::Approx(sm_logpdf(45.0, theta)).epsilon(1e-9));
    MixtureParams hi(1.0 - 1e-14, gamma, theta);
    CHECK(mixture_logpdf(52.0, hi) ==
          doctest::Approx(sn_logpdf(52.0, gamma)).epsilon(1e-9));
  }
  SUBCASE("direct-space identity") {
    RngStream rng(3);
    for (int i = 0; i < 50; ++i) {
      MixtureParams psi(rng.uniform(0.05, 0.95), gamma, theta);
      double y = rng.uniform(40.0, 60.0);
      double direct = psi.pi * std::exp(sn_logpdf(y, gamma)) +
                      (1.0 - psi.pi) * std::exp(sm_logpdf(y, theta));
      CHECK(rel_err(std::exp(mixture_logpdf(y, psi)), direct) < 1e-12);
    }
  }
  CHECK_THROWS_AS(MixtureParams(-0.1, gamma, theta), DomainError);
  CHECK_THROWS_AS(MixtureParams(1.1, gamma, theta), DomainError);
  // degenerate but representable endpoints collapse to one component
  CHECK(mixture_logpdf(45.0, MixtureParams(0.0, gamma, theta)) ==
        sm_logpdf(45.0, theta));
  CHECK(mixture_logpdf(52.0, MixtureParams(1.0, gamma, theta)) ==
        sn_logpdf(52.0, gamma));
}

TEST_CASE("adjusted likelihood") {
  SinghMaddalaParams theta(3.5, 39.0, 1.5);

  SUBCASE("single threshold closed form") {
    NeighborhoodSpec nk(50.0, 10.0);
    double y = 25.0;
    double z = 1.0 - (sm_cdf(60.0, theta) - sm_cdf(40.0, theta));
    double want = sm_logpdf(y, theta) - std::log(z);
    CHECK(adjusted_loglik(theta, make_obs({y}), {nk}) ==
          doctest::Approx(want).epsilon(1e-13));
  }
  SUBCASE("zero-width limit recovers the plain likelihood") {
    NeighborhoodSpec nk(50.0, 1e-9);
    auto obs = make_obs({20.0, 30.0, 80.0});
    double plain = 0.0;
    for (const auto& o : obs) plain += sm_logpdf(o.y, theta);
    CHECK(adjusted_loglik(theta, obs, {nk}) == doctest::Approx(plain).epsilon(1e-7));
  }
  SUBCASE("multi-threshold mass against quadrature") {
    std::vector<NeighborhoodSpec> nks{{30.0, 5.0}, {50.0, 5.0}, {70.0, 5.0}};
    double z = sm_outside_mass(theta, nks);
    // complement integral: [0,25] + [35,45] + [55,65] + [75,inf)
    auto pdf = [&](double y) { return std::exp(sm_logpdf(y, theta)); };
    double qz = integrate(pdf, 1e-12, 25.0, 1e-9, 1e-12).value +
                integrate(pdf, 35.0, 45.0, 1e-9, 1e-12).value +
                integrate(pdf, 55.0, 65.0, 1e-9, 1e-12).value +
                sm_survival(75.0, theta);
    CHECK(z == doctest::Approx(qz).epsilon(1e-6));

    // truncation constant: Z + sum of inside integrals = 1
    double inside = 0.0;
    for (const auto& nk : nks) inside += integrate(pdf, nk.lo(), nk.hi(), 1e-10, 1e-13).value;
    CHECK(z + inside == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("step1 posterior") {
  auto priors = PriorConfig::simulation_defaults();
  std::vector<NeighborhoodSpec> nks{{50.0, 10.0}};

  SUBCASE("zero observations reduce to the prior") {
    Step1Model m({}, nks, priors);
    std::vector<double> x{0.3, 3.4, 0.2};
    double want = priors.log_a.logpdf(x[0]) + priors.log_b.logpdf(x[1]) +
                  priors.log_q.logpdf(x[2]);
    CHECK(model_value(m, x) == doctest::Approx(want).epsilon(1e-13));
    check_gradient(m, x);
  }
  SUBCASE("gradient at random points") {
    RngStream rng(17);
    SinghMaddalaParams truth(3.5, 39.0, 1.5);
    std::vector<Observation> data;
    for (double y : sm_sample(truth, rng, 200)) data.push_back({y, 0});
    auto part = partition(data, nks);
    Step1Model m(part.outside, nks, priors);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> x{std::log(3.5) + 0.3 * rng.normal(),
                            std::log(39.0) + 0.3 * rng.normal(),
                            std::log(1.5) + 0.3 * rng.normal()};
      check_gradient(m, x);
    }
  }
  SUBCASE("pathological params reject with -inf") {
    Step1Model m(make_obs({25.0}), nks, priors);
    std::vector<double> g(3);
    CHECK(m.value_grad(std::vector<double>{1e4, 1e4, 1e4}, g) == kNegInf);
    CHECK(g == std::vector<double>{0.0, 0.0, 0.0});
  }
  SUBCASE("constrain round trip") {
    Step1Model m({}, nks, priors);
    std::vector<double> x{0.5, 3.0, -0.2};
    auto c = m.constrain(x);
    for (int i = 0; i < 3; ++i)
      CHECK(std::log(c[static_cast<std::size_t>(i)]) ==
            doctest::Approx(x[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("step2 posterior") {
  auto priors = PriorConfig::simulation_defaults();
  NeighborhoodSpec nk(50.0, 10.0);
  SinghMaddalaParams theta_hat(3.5, 39.0, 1.5);
  RngStream rng(23);
  SkewNormalParams gamma(50.0, 3.0, 4.0);
  std::vector<Observation> inside;
  for (double y : sn_sample(gamma, rng, 150)) {
    if (nk.contains(y)) inside.push_back({y, 0});
  }
  for (double y : sm_sample(theta_hat, rng, 400)) {
    if (nk.contains(y)) inside.push_back({y, 0});
  }

  SUBCASE("empty inside-set is prior only") {
    Step2Model m({}, nk, theta_hat, priors);
    std::vector<double> x{0.2, std::log(3.0), 1.0};
    double want = priors.logit_pi.logpdf(x[0]) +
                  normal_logpdf(3.0, 0.0, 10.0) + x[1] +
                  priors.delta.logpdf(x[2]);
    CHECK(model_value(m, x) == doctest::Approx(want).epsilon(1e-12));
    check_gradient(m, x);
  }
  SUBCASE("gradient, beta fixed") {
    Step2Model m(inside, nk, theta_hat, priors, true);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> x{rng.normal(-1.0, 1.0), std::log(3.0) + 0.4 * rng.normal(),
                            rng.normal(2.0, 1.5)};
      check_gradient(m, x);
    }
  }
  SUBCASE("gradient, beta free") {
    Step2Model m(inside, nk, theta_hat, priors, false);
    for (int i = 0; i < 30; ++i) {
      std::vector<double> x{rng.normal(-1.0, 1.0), 50.0 + rng.normal(),
                            std::log(3.0) + 0.4 * rng.normal(), rng.normal(2.0, 1.5)};
      check_gradient(m, x);
    }
    CHECK(m.dim() == 4);
    CHECK(m.param_names()[1] == "beta");
  }
  SUBCASE("constrain round trip") {
    Step2Model m(inside, nk, theta_hat, priors, true);
    std::vector<double> x{-0.7, std::log(2.5), 3.1};
    auto c = m.constrain(x);
    CHECK(logit(c[0]) == doctest::Approx(x[0]).epsilon(1e-12));
    CHECK(std::log(c[1]) == doctest::Approx(x[1]).epsilon(1e-12));
    CHECK(c[2] == x[2]);
  }
}

TEST_CASE("hierarchical step1 posterior") {
  auto priors = PriorConfig::simulation_defaults();
  std::vector<NeighborhoodSpec> nks{{50.0, 10.0}};
  RngStream rng(31);
  std::vector<std::vector<Observation>> groups;
  for (int g = 0; g < 3; ++g) {
    SinghMaddalaParams truth(3.5 * std::exp(0.1 * rng.normal()),
                             39.0 * std::exp(0.1 * rng.normal()),
                             1.5 * std::exp(0.1 * rng.normal()));
    std::vector<Observation> obs;
    for (double y : sm_sample(truth, rng, 80)) {
      if (!nks[0].contains(y)) obs.push_back({y, g});
    }
    groups.push_back(obs);
  }
  HierStep1Model m(groups, nks, priors);
  CHECK(m.dim() == 15);

  SUBCASE("gradient") {
    for (int i = 0; i < 15; ++i) {
      std::vector<double> x(15);
      for (int g = 0; g < 3; ++g) {
        x[static_cast<std::size_t>(3 * g + 0)] = std::log(3.5) + 0.2 * rng.normal();
        x[static_cast<std::size_t>(3 * g + 1)] = std::log(39.0) + 0.2 * rng.normal();
        x[static_cast<std::size_t>(3 * g + 2)] = std::log(1.5) + 0.2 * rng.normal();
      }
      x[9] = std::log(3.5) + 0.1 * rng.normal();
      x[10] = std::log(39.0) + 0.1 * rng.normal();
      x[11] = std::log(1.5) + 0.1 * rng.normal();
      for (int j = 12; j < 15; ++j)
        x[static_cast<std::size_t>(j)] = std::log(0.3) + 0.3 * rng.normal();
      check_gradient(m, x);
    }
  }
  SUBCASE("G=1 equals step1 plus random-effect and hyperprior terms") {
    HierStep1Model h({groups[0]}, nks, priors);
    Step1Model s(groups[0], nks, priors);
    std::vector<double> xt{std::log(3.3), std::log(40.0), std::log(1.6)};
    std::vector<double> xh{xt[0], xt[1], xt[2], 1.2, 3.6, 0.4,
                           std::log(0.5), std::log(0.5), std::log(0.5)};
    // difference must equal (random effect + hyperprior) - step1 prior terms
    double extra = 0.0;
    const NormalPrior* mus[3] = {&priors.mu_a, &priors.mu_b, &priors.mu_q};
    const HalfNormalPrior* sigs[3] = {&priors.sigma_a, &priors.sigma_b,
                                      &priors.sigma_q};
    double mu[3] = {1.2, 3.6, 0.4};
    for (int j = 0; j < 3; ++j) {
      extra += mus[j]->logpdf(mu[j]);
      extra += sigs[j]->logpdf(0.5) + std::log(0.5);
      extra += normal_logpdf(xt[static_cast<std::size_t>(j)], mu[j], 0.5);
    }
    double step1_priors = priors.log_a.logpdf(xt[0]) + priors.log_b.logpdf(xt[1]) +
                          priors.log_q.logpdf(xt[2]);
    CHECK(model_value(h, xh) - model_value(s, xt) ==
          doctest::Approx(extra - step1_priors).epsilon(1e-10));
  }
  SUBCASE("shrunk random effects approach independent fits") {
    // sigma -> 0 with shared means: group coordinates pinned at the mean;
    // likelihood part must match the sum of independent adjusted logliks
    std::vector<double> x(15);
    double mu[3] = {std::log(3.5), std::log(39.0), std::log(1.5)};
    for (int g = 0; g < 3; ++g)
      for (int j = 0; j < 3; ++j) x[static_cast<std::size_t>(3 * g + j)] = mu[j];
    for (int j = 0; j < 3; ++j) x[static_cast<std::size_t>(9 + j)] = mu[j];
    for (int j = 12; j < 15; ++j) x[static_cast<std::size_t>(j)] = std::log(1e-3);
    SinghMaddalaParams theta(3.5, 39.0, 1.5);
    double ll = 0.0;
    for (const auto& gobs : groups) ll += adjusted_loglik(theta, gobs, nks);
    // subtract all prior and random-effect terms evaluated directly
    double prior_terms = 0.0;
    const NormalPrior* mus[3] = {&priors.mu_a, &priors.mu_b, &priors.mu_q};
    const HalfNormalPrior* sigs[3] = {&priors.sigma_a, &priors.sigma_b,
                                      &priors.sigma_q};
    for (int j = 0; j < 3; ++j) {
      prior_terms += mus[j]->logpdf(mu[j]);
      prior_terms += sigs[j]->logpdf(1e-3) + std::log(1e-3);
      prior_terms += 3.0 * normal_logpdf(0.0, 0.0, 1e-3);  // z = 0 at the mean
    }
    CHECK(model_value(m, x) == doctest::Approx(ll + prior_terms).epsilon(1e-9));
  }
}

TEST_CASE("hierarchical step2 posterior") {
  auto priors = PriorConfig::simulation_defaults();
  NeighborhoodSpec nk(50.0, 10.0);
  RngStream rng(41);
  std::vector<std::vector<Observation>> groups;
  std::vector<SinghMaddalaParams> hats;
  for (int g = 0; g < 3; ++g) {
    SinghMaddalaParams theta(3.5, 39.0, 1.5);
    hats.push_back(theta);
    SkewNormalParams gamma(50.0, 3.0, 4.0);
    std::vector<Observation> obs;
    for (double y : sn_sample(gamma, rng, 40)) {
      if (nk.contains(y)) obs.push_back({y, g});
    }
    for (double y : sm_sample(theta, rng, 120)) {
      if (nk.contains(y)) obs.push_back({y, g});
    }
    groups.push_back(obs);
  }

  SUBCASE("gradient, beta fixed") {
    HierStep2Model m(groups, nk, hats, priors, true);
    CHECK(m.dim() == 15);
    for (int i = 0; i < 12; ++i) {
      std::vector<double> x(15);
      for (int g = 0; g < 3; ++g) {
        x[static_cast<std::size_t>(3 * g + 0)] = rng.normal(-1.0, 0.8);
        x[static_cast<std::size_t>(3 * g + 1)] = std::log(3.0) + 0.3 * rng.normal();
        x[static_cast<std::size_t>(3 * g + 2)] = rng.normal(2.0, 1.0);
      }
      x[9] = rng.normal(-1.0, 0.5);
      x[10] = std::log(3.0) + 0.2 * rng.normal();
      x[11] = rng.normal(2.0, 0.5);
      for (int j = 12; j < 15; ++j)
        x[static_cast<std::size_t>(j)] = std::log(0.4) + 0.3 * rng.normal();
      check_gradient(m, x);
    }
  }
  SUBCASE("gradient, sensitivity mode (free beta)") {
    auto sens = priors;
    sens.sigma_beta = {0.0, 1000.0};
    HierStep2Model m(groups, nk, hats, sens, false);
    CHECK(m.dim() == 3 * 4 + 7);
    for (int i = 0; i < 8; ++i) {
      std::vector<double> x(static_cast<std::size_t>(m.dim()));
      for (int g = 0; g < 3; ++g) {
        x[static_cast<std::size_t>(4 * g + 0)] = rng.normal(-1.0, 0.8);
        x[static_cast<std::size_t>(4 * g + 1)] = 50.0 + rng.normal();
        x[static_cast<std::size_t>(4 * g + 2)] = std::log(3.0) + 0.3 * rng.normal();
        x[static_cast<std::size_t>(4 * g + 3)] = rng.normal(2.0, 1.0);
      }
      x[12] = rng.normal(-1.0, 0.5);
      x[13] = std::log(3.0) + 0.2 * rng.normal();
      x[14] = rng.normal(2.0, 0.5);
      for (int j = 15; j < 19; ++j)
        x[static_cast<std::size_t>(j)] = std::log(0.8) + 0.3 * rng.normal();
      check_gradient(m, x);
    }
  }
  SUBCASE("constrain round trip and names") {
    HierStep2Model m(groups, nk, hats, priors, true);
    std::vector<double> x(15, 0.3);
    auto c = m.constrain(x);
    auto names = m.param_names();
    REQUIRE(c.size() == names.size());
    CHECK(names[0] == "pi[0]");
    CHECK(logit(c[0]) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(names[12] == "sigma_pi");
    CHECK(std::log(c[12]) == doctest::Approx(0.3).epsilon(1e-12));
  }
}
