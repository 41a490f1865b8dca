#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oncoclip/encoders.hpp"
#include "oncoclip/losses.hpp"
#include "oncoclip/random.hpp"
#include "support/gradcheck.hpp"

using namespace oncoclip;
using namespace oncoclip::loss;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

// Direct transcription of the symmetric InfoNCE objective, used as an oracle.
double infonce_oracle(const Matrix& u, const Matrix& v, double tau) {
  const std::size_t n = u.rows;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      row += std::exp(dot(u.row(i), v.row(k)) / tau);
      col += std::exp(dot(u.row(k), v.row(i)) / tau);
    }
    const double pos = std::exp(dot(u.row(i), v.row(i)) / tau);
    total += -std::log(pos / row) - std::log(pos / col);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("multitask cross-entropy values") {
  const Matrix zeros(3, 4);
  const std::vector<int> labels{0, 3, 2};
  CHECK(multitask_ce(zeros, labels, Reduction::sum).value == doctest::Approx(3.0 * std::log(4.0)));
  CHECK(multitask_ce(zeros, labels, Reduction::mean).value == doctest::Approx(std::log(4.0)));

  const Matrix l = Matrix::from_rows({{std::log(3.0), 0.0}});
  const std::vector<int> y{0};
  CHECK(multitask_ce(l, y).value == doctest::Approx(-std::log(0.75)));

  const std::vector<int> masked{0, kMissingLabel, 2};
  const auto m = multitask_ce(zeros, masked, Reduction::sum);
  CHECK(m.value == doctest::Approx(2.0 * std::log(4.0)));
  for (std::size_t c = 0; c < 4; ++c) CHECK(m.grad(1, c) == 0.0);

  const std::vector<int> out_of_range{4, 0, 0};
  CHECK_THROWS_AS(multitask_ce(zeros, out_of_range), std::invalid_argument);
}

TEST_CASE("multitask cross-entropy gradient") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Matrix z = random_matrix(5, 4, rng);
    std::vector<int> y(5);
    for (auto& v : y) v = static_cast<int>(rng.below(4));
    y[2] = kMissingLabel;
    for (auto red : {Reduction::sum, Reduction::mean}) {
      const auto r = multitask_ce(z, y, red);
      auto loss = [&] { return multitask_ce(z, y, red).value; };
      CHECK(testing::max_relative_error(std::span<double>(z.data), r.grad.data, loss) < 1e-5);
    }
  }
}

TEST_CASE("masked language modelling loss") {
  MlmBatch b;
  b.samples = 2;
  b.masked_per_sample = 3;
  b.probs = Matrix(6, 10);
  for (auto& p : b.probs.data) p = 0.1;
  b.targets = {0, 1, 2, 3, 4, 9};
  const auto v = mlm_loss(b);
  CHECK(v.value == doctest::Approx(std::log(10.0)));
  CHECK_FALSE(v.degenerate);

  b.probs(4, 4) = 0.0;
  b.probs(4, 5) = 0.2;
  const auto d = mlm_loss(b);
  CHECK(d.degenerate);
  CHECK(std::isinf(d.value));

  b.targets.pop_back();
  CHECK_THROWS_AS(mlm_loss(b), std::invalid_argument);

  const Matrix logits(6, 10);
  const std::vector<std::uint32_t> t{0, 1, 2, 3, 4, 9};
  CHECK(mlm_loss_from_logits(logits, t, 2, 3).value == doctest::Approx(std::log(10.0)));
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(cosine_sim(a, b) == doctest::Approx(32.0 / std::sqrt(1078.0)));
  const std::vector<double> z{0, 0, 0};
  CHECK_THROWS_AS(cosine_sim(a, z), std::invalid_argument);
}

TEST_CASE("SimCSE variants on orthogonal pairs") {
  const Matrix h = Matrix::from_rows({{1, 0}, {0, 1}});
  CHECK(simcse_loss(h, h, 1.0, SimcseVariant::as_written).value == doctest::Approx(-1.0));
  CHECK(simcse_loss(h, h, 1.0, SimcseVariant::standard).value == doctest::Approx(std::log1p(std::exp(-1.0))));
  CHECK_THROWS_AS(simcse_loss(h, h, 0.0), std::invalid_argument);
}

TEST_CASE("SimCSE gradient through normalisation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Matrix a = random_matrix(4, 6, rng);
    Matrix b = random_matrix(4, 6, rng);
    for (auto variant : {SimcseVariant::standard, SimcseVariant::as_written}) {
      const auto r = simcse_loss(a, b, 0.2, variant);
      auto loss = [&] { return simcse_loss(a, b, 0.2, variant).value; };
      CHECK(testing::max_relative_error(std::span<double>(a.data), r.grad_a.data, loss) < 1e-5);
      CHECK(testing::max_relative_error(std::span<double>(b.data), r.grad_b.data, loss) < 1e-5);
    }
  }
}

TEST_CASE("symmetric InfoNCE") {
  const Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
  CHECK(clip_infonce(eye, eye, 0.0).value == doctest::Approx(2.0 * std::log1p(std::exp(-1.0))));

  Rng rng(5);
  const Matrix u = nn::l2_normalize_rows(random_matrix(6, 4, rng));
  const Matrix v = nn::l2_normalize_rows(random_matrix(6, 4, rng));
  CHECK(clip_infonce(u, v, std::log(1.0 / 0.07)).value == doctest::Approx(infonce_oracle(u, v, 0.07)).epsilon(1e-12));

  CHECK_THROWS_AS(clip_infonce(random_matrix(2, 2, rng), eye, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_infonce(eye, Matrix::from_rows({{1, 0}}), 0.0), std::invalid_argument);
}

TEST_CASE("InfoNCE is invariant to a joint permutation of pairs") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix u = nn::l2_normalize_rows(random_matrix(7, 3, rng));
    const Matrix v = nn::l2_normalize_rows(random_matrix(7, 3, rng));
    std::vector<std::size_t> perm(7);
    for (std::size_t i = 0; i < 7; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    Matrix pu(7, 3), pv(7, 3);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t d = 0; d < 3; ++d) pu(i, d) = u(perm[i], d), pv(i, d) = v(perm[i], d);
    CHECK(clip_infonce(pu, pv, 1.3).value == doctest::Approx(clip_infonce(u, v, 1.3).value).epsilon(1e-12));
  }
}

TEST_CASE("InfoNCE gradient through normalisation and temperature") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Matrix a = random_matrix(5, 4, rng);
    Matrix b = random_matrix(5, 4, rng);
    std::vector<double> lit{rng.uniform(0.0, 3.0)};

    auto composite = [&] {
      return clip_infonce(nn::l2_normalize_rows(a), nn::l2_normalize_rows(b), lit[0]).value;
    };
    std::vector<double> na, nb;
    const Matrix u = nn::l2_normalize_rows(a, &na);
    const Matrix v = nn::l2_normalize_rows(b, &nb);
    const auto r = clip_infonce(u, v, lit[0]);
    const Matrix ga = nn::l2_normalize_rows_backward(u, na, r.grad_u);
    const Matrix gb = nn::l2_normalize_rows_backward(v, nb, r.grad_v);
    CHECK(testing::max_relative_error(std::span<double>(a.data), ga.data, composite) < 1e-5);
    CHECK(testing::max_relative_error(std::span<double>(b.data), gb.data, composite) < 1e-5);
    const std::vector<double> gt{r.grad_log_inv_tau};
    CHECK(testing::max_relative_error(lit, gt, composite) < 1e-5);
  }
}

TEST_CASE("temperature clamp") {
  CHECK(clamp_log_inv_tau(std::log(1.0 / 0.001)) == doctest::Approx(std::log(1.0 / kMinTau)));
  CHECK(clamp_log_inv_tau(std::log(1.0 / 1000.0)) == doctest::Approx(std::log(1.0 / kMaxTau)));
  CHECK(clamp_log_inv_tau(0.3) == 0.3);
}

TEST_CASE("Cox partial likelihood") {
  const std::vector<double> eta{0.0, 0.0}, t{1.0, 2.0};
  const std::vector<int> e{1, 0};
  CHECK(cox_partial_loglik(eta, t, e).value == doctest::Approx(std::log(2.0)));

  // Brute-force oracle with ties handled the Breslow way.
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 12;
    std::vector<double> x(n), time(n);
    std::vector<int> ev(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      time[i] = static_cast<double>(rng.integer(1, 6));
      ev[i] = rng.bernoulli(0.7) ? 1 : 0;
    }
    ev[0] = 1;
    double oracle = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!ev[i]) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (time[j] >= time[i]) s += std::exp(x[j]);
      oracle -= x[i] - std::log(s);
    }
    const auto r = cox_partial_loglik(x, time, ev);
    CHECK(r.value == doctest::Approx(oracle).epsilon(1e-12));
    const auto events = static_cast<double>(std::count(ev.begin(), ev.end(), 1));
    CHECK(cox_partial_loglik(x, time, ev, Reduction::mean).value == doctest::Approx(oracle / events).epsilon(1e-12));

    auto loss = [&] { return cox_partial_loglik(x, time, ev).value; };
    CHECK(testing::max_relative_error(x, r.grad, loss) < 1e-5);

    // Adding a constant to every predictor leaves the likelihood unchanged.
    std::vector<double> shifted = x;
    for (auto& v : shifted) v += 50.0;
    CHECK(cox_partial_loglik(shifted, time, ev).value == doctest::Approx(oracle).epsilon(1e-9));
  }

  const std::vector<int> none{0, 0};
  CHECK_THROWS_AS(cox_partial_loglik(eta, t, none, Reduction::mean), std::invalid_argument);
}
