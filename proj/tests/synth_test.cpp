#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oncoclip/clfmetrics.hpp"
#include "oncoclip/survival.hpp"
#include "oncoclip/synth.hpp"

using namespace oncoclip;
using namespace oncoclip::synth;

TEST_CASE("vocabulary layout") {
  CHECK(vocabulary().size() == kVocabSize);
  CHECK(attribute_token(0, 0) == 0);
  CHECK(attribute_token(13, 2) == 60);
  CHECK(filler_count() == 3);
  CHECK(token_word(attribute_token(11, 3)) == "q12c3");
  CHECK_THROWS_AS(attribute_token(3, 2), std::invalid_argument);
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-13));
  CHECK(normal_quantile(0.01) == doctest::Approx(-2.326347874040841).epsilon(1e-13));
  for (double p : {0.001, 0.2, 0.6, 0.999})
    CHECK(0.5 * std::erfc(-normal_quantile(p) / std::sqrt(2.0)) == doctest::Approx(p).epsilon(1e-13));
}

TEST_CASE("cohort generation is deterministic and well-formed") {
  SynthConfig cfg;
  cfg.phases = 3;
  const auto a = gen_cohort(50, 7, cfg);
  const auto b = gen_cohort(50, 7, cfg);
  CHECK(a.fingerprint == b.fingerprint);
  CHECK(a.features().data == b.features().data);
  CHECK(gen_cohort(50, 8, cfg).fingerprint != a.fingerprint);

  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& p = a.patients[i];
    CHECK(p.time == std::min(p.event_time, p.censor_time));
    CHECK(p.event == (p.event_time <= p.censor_time ? 1 : 0));
    CHECK(p.phase_features.size() == 3);
    CHECK(p.phase_tags == std::vector<char>{'A', 'V', 'N'});
    CHECK(p.shuffles.size() == 4);
    for (std::size_t k = 0; k < kNumAttributes; ++k) {
      CHECK(p.labels[k] >= 0);
      CHECK(p.labels[k] < static_cast<int>(nn::kAttributeClasses[k]));
    }
    CHECK(p.malignant == (p.z[0] > normal_quantile(0.6) ? 1 : 0));
    CHECK(p.aggressive == (p.z[1] > normal_quantile(2.0 / 3.0) ? 1 : 0));
    auto sorted = a.tokens(i);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t v = 1; v <= 4; ++v) {
      auto s = a.tokens(i, v);
      std::sort(s.begin(), s.end());
      CHECK(s == sorted);
    }
    CHECK(a.tokens(i).size() == kNumAttributes + cfg.noise_tokens);
  }

  SynthConfig bad;
  bad.phases = 5;
  CHECK_THROWS_AS(gen_cohort(10, 0, bad), std::invalid_argument);
  CHECK_THROWS_AS(gen_cohort(0, 0), std::invalid_argument);
}

TEST_CASE("noise-free features are exact linear images of the latent factors") {
  SynthConfig cfg;
  cfg.noise_sigma = 0.0;
  const auto c = gen_cohort(20, 1, cfg);
  for (const auto& p : c.patients)
    for (std::size_t f = 0; f < cfg.feature_dim; ++f) {
      double s = 0.0;
      for (std::size_t l = 0; l < cfg.latent_dim; ++l) s += c.w(f, l) * p.z[l];
      CHECK(p.x[f] == s);
    }
  const auto o = oracle_scores(c);
  std::vector<int> y = c.malignancy();
  if (std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0) {
    CHECK(metrics::roc_auc(o.malignancy_score, y) == 1.0);
    for (auto& v : y) v = 1 - v;
    CHECK(metrics::roc_auc(o.malignancy_score, y) == 0.0);
  }
}

TEST_CASE("oracle_scores refuses foreign cohorts") {
  auto c = gen_cohort(10, 2);
  CHECK_NOTHROW(oracle_scores(c));
  c.patients[3].time += 1.0;
  CHECK_THROWS_AS(oracle_scores(c), std::invalid_argument);
  SynthCohort empty;
  CHECK_THROWS_AS(oracle_scores(empty), std::invalid_argument);
}

TEST_CASE("marginal attribute frequencies follow the quantile cuts") {
  const auto c = gen_cohort(10000, 3);
  for (std::size_t k = 0; k < kNumAttributes; ++k) {
    const auto y = c.attribute_labels(k);
    const auto classes = nn::kAttributeClasses[k];
    for (std::size_t cls = 0; cls < classes; ++cls) {
      const double freq = static_cast<double>(std::count(y.begin(), y.end(), static_cast<int>(cls))) / 10000.0;
      CHECK(std::abs(freq - 1.0 / static_cast<double>(classes)) < 0.03);
    }
  }
}

TEST_CASE("survival draws") {
  SUBCASE("no censoring when the censoring rate is zero") {
    SynthConfig cfg;
    cfg.censor_rate = 0.0;
    const auto c = gen_cohort(500, 4, cfg);
    for (const auto& p : c.patients) CHECK(p.event == 1);
  }

  SUBCASE("event fraction matches the competing-exponentials expectation") {
    const auto c = gen_cohort(2000, 5);
    // E over z1 ~ N(0,1) of lh / (lh + lc), lh = 0.05 exp(z1), by midpoint quadrature.
    double expect = 0.0, mass = 0.0;
    for (double z = -8.0; z < 8.0; z += 1e-3) {
      const double zz = z + 5e-4;
      const double w = std::exp(-zz * zz / 2.0);
      const double lh = 0.05 * std::exp(zz);
      expect += w * lh / (lh + 0.02);
      mass += w;
    }
    expect /= mass;
    const auto e = c.events();
    const double frac = static_cast<double>(std::count(e.begin(), e.end(), 1)) / 2000.0;
    CHECK(std::abs(frac - expect) < 0.05);
  }

  SUBCASE("KM of uncensored draws follows the analytic mixture survival") {
    SynthConfig cfg;
    cfg.censor_rate = 0.0;
    const auto c = gen_cohort(5000, 6, cfg);
    const auto km = survival::km_estimate(c.times(), c.events());
    double worst = 0.0;
    for (double t = 1.0; t < 100.0; t += 3.0) {
      double s = 0.0, mass = 0.0;
      for (double z = -8.0; z < 8.0; z += 1e-2) {
        const double zz = z + 5e-3;
        const double w = std::exp(-zz * zz / 2.0);
        s += w * std::exp(-0.05 * std::exp(zz) * t);
        mass += w;
      }
      worst = std::max(worst, std::abs(km.at(t) - s / mass));
    }
    CHECK(worst < 0.03);
  }
}
