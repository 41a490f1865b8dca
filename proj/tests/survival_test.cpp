#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "oncoclip/error.hpp"
#include "oncoclip/random.hpp"
#include "oncoclip/survival.hpp"
#include "oncoclip/synth.hpp"

#include "support/survival_oracles.hpp"

using namespace oncoclip;
using namespace oncoclip::testing;
using namespace oncoclip::survival;

TEST_CASE("Kaplan-Meier") {
  const auto a = km_estimate(std::vector<double>{1, 2, 3}, std::vector<int>{1, 1, 1});
  CHECK(a.at(1) == doctest::Approx(2.0 / 3.0));
  CHECK(a.at(2) == doctest::Approx(1.0 / 3.0));
  CHECK(a.at(3) == 0.0);
  CHECK(a.at(0.5) == 1.0);
  CHECK(a.before(2) == doctest::Approx(2.0 / 3.0));

  const auto b = km_estimate(std::vector<double>{1, 2, 3}, std::vector<int>{1, 0, 1});
  CHECK(b.at(1) == doctest::Approx(2.0 / 3.0));
  CHECK(b.at(2.5) == doctest::Approx(2.0 / 3.0));
  CHECK(b.at(3) == 0.0);

  const auto c = km_estimate(std::vector<double>{4, 5}, std::vector<int>{0, 0});
  CHECK(c.at(10) == 1.0);
  CHECK_THROWS_AS(km_estimate(std::vector<double>{}, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(km_estimate(std::vector<double>{0.0}, std::vector<int>{1}), std::invalid_argument);

  // Without censoring KM is the empirical survival function.
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> t;
    for (int i = 0; i < 25; ++i) t.push_back(static_cast<double>(rng.integer(1, 10)));
    const std::vector<int> e(t.size(), 1);
    const auto k = km_estimate(t, e);
    for (double q = 0.5; q < 11; q += 0.5) {
      const double frac = static_cast<double>(std::count_if(t.begin(), t.end(), [&](double v) { return v > q; })) / 25.0;
      CHECK(k.at(q) == doctest::Approx(frac).epsilon(1e-12));
    }
    for (std::size_t j = 1; j < k.survival.size(); ++j) CHECK(k.survival[j] <= k.survival[j - 1]);
  }
}

TEST_CASE("log-rank test") {
  const std::vector<double> t{1, 3, 4, 7, 9};
  const std::vector<int> e{1, 0, 1, 1, 0};
  const auto same = logrank_test(t, e, t, e);
  CHECK(same.chi2 == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(same.p == doctest::Approx(1.0));

  // One stratum: 20 at risk, 10 events all in A. E = 5, V = 10 * 1/4 * 10/19.
  const std::vector<double> ta(10, 1.0), tb(10, 2.0);
  const std::vector<int> ea(10, 1), eb(10, 0);
  const auto r = logrank_test(ta, ea, tb, eb);
  const double v = 10.0 * 0.25 * 10.0 / 19.0;
  CHECK(r.chi2 == doctest::Approx(25.0 / v).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(std::erfc(std::sqrt(r.chi2 / 2.0))));

  CHECK_THROWS_AS(logrank_test(ta, eb, tb, eb), UndefinedMetric);
  CHECK_THROWS_AS(logrank_test(std::vector<double>{}, std::vector<int>{}, tb, eb), std::invalid_argument);
  CHECK(chi2_sf_1df(3.841458820694124) == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("Cox derivatives and first Newton step") {
  const Matrix x = Matrix::from_rows({{1.0}, {0.0}});
  const std::vector<double> t{1, 2}, beta{0.0};
  const std::vector<int> e{1, 0};
  const auto d = cox_derivatives(x, t, e, beta);
  CHECK(d.loglik == doctest::Approx(-std::log(2.0)));
  CHECK(d.score[0] == doctest::Approx(0.5));
  CHECK(d.information(0, 0) == doctest::Approx(0.25));
  CHECK(d.score[0] / d.information(0, 0) == doctest::Approx(2.0));

  // Score is the gradient of the log-likelihood.
  Rng rng(3);
  Matrix z(40, 2);
  std::vector<double> tt(40);
  std::vector<int> ee(40);
  for (std::size_t i = 0; i < 40; ++i) {
    z(i, 0) = rng.normal();
    z(i, 1) = rng.normal();
    tt[i] = static_cast<double>(rng.integer(1, 15));
    ee[i] = rng.bernoulli(0.7);
  }
  std::vector<double> b{0.3, -0.4};
  const auto g = cox_derivatives(z, tt, ee, b);
  for (std::size_t a = 0; a < 2; ++a) {
    auto up = b, dn = b;
    up[a] += 1e-5;
    dn[a] -= 1e-5;
    const auto gu = cox_derivatives(z, tt, ee, up), gd = cox_derivatives(z, tt, ee, dn);
    CHECK(g.score[a] == doctest::Approx((gu.loglik - gd.loglik) / 2e-5).epsilon(1e-6));
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(g.information(a, c) == doctest::Approx(-(gu.score[c] - gd.score[c]) / 2e-5).epsilon(1e-6));
  }
}

TEST_CASE("Cox fit") {
  SUBCASE("constant covariate is rank-deficient") {
    const Matrix x = Matrix::from_rows({{1}, {1}, {1}});
    CHECK_THROWS_AS(cox_fit(x, std::vector<double>{1, 2, 3}, std::vector<int>{1, 1, 0}), std::invalid_argument);
  }

  SUBCASE("recovers the generating coefficient and reports Wald quantities") {
    synth::SynthConfig cfg;
    const auto cohort = synth::gen_cohort(2000, 0, cfg);
    Matrix x(cohort.size(), 1);
    for (std::size_t i = 0; i < cohort.size(); ++i) x(i, 0) = cohort.patients[i].z[1];
    const auto fit = cox_fit(x, cohort.times(), cohort.events());
    CHECK(fit.converged);
    CHECK(fit.beta[0] > 0.9);
    CHECK(fit.beta[0] < 1.1);
    CHECK(fit.hazard_ratio[0] == doctest::Approx(std::exp(fit.beta[0])));
    CHECK(fit.ci_lo[0] < fit.hazard_ratio[0]);
    CHECK(fit.ci_hi[0] > fit.hazard_ratio[0]);
    CHECK(fit.ci_lo[0] == doctest::Approx(std::exp(fit.beta[0] - 1.96 * fit.se[0])));
    CHECK(fit.p[0] > 0.0);
    CHECK(fit.p[0] <= 1.0);
    for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k) CHECK(fit.loglik_trace[k] >= fit.loglik_trace[k - 1]);
    CHECK(fit.loglik >= fit.loglik_null);
  }

  SUBCASE("perfect separation trips the divergence guard") {
    const Matrix x = Matrix::from_rows({{1}, {1}, {0}, {0}});
    const auto fit = cox_fit(x, std::vector<double>{1, 2, 3, 4}, std::vector<int>{1, 1, 1, 1});
    CHECK_FALSE(fit.converged);
    CHECK(fit.diverged);
    CHECK_THROWS_AS(breslow_baseline(fit, x, std::vector<double>{1, 2, 3, 4}, std::vector<int>{1, 1, 1, 1}), StateError);
  }
}

TEST_CASE("Breslow baseline") {
  CoxFit fit;
  fit.beta = {0.0};
  fit.converged = true;
  const Matrix x = Matrix::from_rows({{0.7}, {-1.0}});
  const std::vector<double> t{1, 2};
  const std::vector<int> e{1, 1};
  const auto base = breslow_baseline(fit, x, t, e);
  CHECK(base.survival(1) == doctest::Approx(std::exp(-0.5)));
  CHECK(base.survival(2) == doctest::Approx(std::exp(-1.5)));
  CHECK(base.survival(0.5) == 1.0);
  CHECK(survival_at(fit, base, std::vector<double>{3.0}, 1.5) == survival_at(fit, base, std::vector<double>{-2.0}, 1.5));

  fit.beta = {0.8};
  const auto b2 = breslow_baseline(fit, x, t, e);
  double prev = 1.0;
  for (double q = 0.0; q < 3.0; q += 0.25) {
    const double s = survival_at(fit, b2, std::vector<double>{0.3}, q);
    CHECK(s <= prev);
    prev = s;
  }
}

TEST_CASE("Harrell C examples") {
  const std::vector<double> t{1, 2};
  const std::vector<int> e{1, 1};
  CHECK(harrell_cindex(t, e, std::vector<double>{0.9, 0.1}) == 1.0);
  CHECK(harrell_cindex(t, e, std::vector<double>{0.1, 0.9}) == 0.0);
  CHECK(harrell_cindex(t, e, std::vector<double>{0.5, 0.5}) == 0.5);
  CHECK_THROWS_AS(harrell_cindex(t, std::vector<int>{0, 0}, std::vector<double>{1, 2}), UndefinedMetric);
}

TEST_CASE("concordance metrics against brute-force enumeration") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(59);
    Cohort c = random_cohort(rng, n);
    c.event[0] = 1;
    c.time[0] = 1;
    c.time[1] = 12;
    c.event[1] = 0;
    const KmCurve g = censoring_km(c.time, c.event);

    CHECK(close(harrell_cindex(c.time, c.event, c.risk), harrell_brute(c)));

    const double tau = static_cast<double>(rng.integer(2, 12));
    double uno = 0.0;
    bool defined = true;
    try {
      uno = ipcw_cindex(g, c.time, c.event, c.risk, tau);
    } catch (const UndefinedMetric&) {
      defined = false;
    }
    if (defined) CHECK(close(uno, uno_brute(c, tau)));

    const double t_eval = static_cast<double>(rng.integer(1, 11));
    std::vector<double> ev{t_eval};
    bool cd_defined = true;
    double cd = 0.0;
    try {
      cd = cumulative_dynamic_auc(g, c.time, c.event, c.risk, ev)[0];
    } catch (const UndefinedMetric&) {
      cd_defined = false;
    }
    if (cd_defined) CHECK(close(cd, cd_auc_brute(c, t_eval)));

    std::vector<double> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(rng.uniform());
    CHECK(close(ipcw_brier(g, s, c.time, c.event, t_eval), brier_brute(c, s, t_eval)));

    // Antisymmetry without risk ties.
    std::vector<double> r, nr;
    for (std::size_t i = 0; i < n; ++i) r.push_back(rng.normal()), nr.push_back(-r.back());
    CHECK(harrell_cindex(c.time, c.event, r) + harrell_cindex(c.time, c.event, nr) == doctest::Approx(1.0));
  }
}

TEST_CASE("IPCW metrics reduce to their unweighted forms without censoring") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Cohort c = random_cohort(rng, 30);
    std::fill(c.event.begin(), c.event.end(), 1);
    const auto g = censoring_km(c.time, c.event);
    CHECK(ipcw_cindex(g, c.time, c.event, c.risk, 1e9) == harrell_cindex(c.time, c.event, c.risk));
    std::vector<double> half(30, 0.5);
    const double t = 6.0;
    CHECK(ipcw_brier(g, half, c.time, c.event, t) == doctest::Approx(0.25));
    std::vector<double> oracle;
    for (double ti : c.time) oracle.push_back(ti <= t ? 0.0 : 1.0);
    CHECK(ipcw_brier(g, oracle, c.time, c.event, t) == 0.0);
  }
}

TEST_CASE("cumulative/dynamic AUC examples") {
  const std::vector<double> t{1, 2, 3, 4, 5, 6};
  const std::vector<int> e{1, 1, 1, 1, 1, 1};
  const auto g = censoring_km(t, e);
  const std::vector<double> perfect{6, 5, 4, 3, 2, 1}, flat(6, 1.0);
  const std::vector<double> times{1.5, 2.5, 4.5};
  for (double a : cumulative_dynamic_auc(g, t, e, perfect, times)) CHECK(a == 1.0);
  for (double a : cumulative_dynamic_auc(g, t, e, flat, times)) CHECK(a == 0.5);
  CHECK_THROWS_AS(cumulative_dynamic_auc(g, t, e, flat, std::vector<double>{6.0}), std::invalid_argument);

  // Censoring survival that reaches zero makes later weights undefined.
  const std::vector<double> t2{1, 2, 3, 4};
  const std::vector<int> e2{0, 1, 1, 0};
  const auto g2 = censoring_km(std::vector<double>{1, 2}, std::vector<int>{0, 0});
  CHECK_THROWS_AS(cumulative_dynamic_auc(g2, t2, e2, std::vector<double>{4, 3, 2, 1}, std::vector<double>{3.5}),
                  UndefinedMetric);
}

TEST_CASE("median dichotomisation") {
  const auto a = dichotomize_median(std::vector<double>{1, 2, 3, 4});
  CHECK(a.median == 2.5);
  CHECK(a.high == std::vector<int>{0, 0, 1, 1});
  const auto b = dichotomize_median(std::vector<double>{2, 2, 2});
  CHECK(b.high == std::vector<int>{0, 0, 0});
  const auto c = dichotomize_median(std::vector<double>{3, 1, 2});
  CHECK(c.median == 2.0);
  CHECK(c.high == std::vector<int>{1, 0, 0});
  CHECK_THROWS_AS(dichotomize_median(std::vector<double>{1}), std::invalid_argument);
}
