// Acceptance run: one line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "oncoclip/clfmetrics.hpp"
#include "oncoclip/encoders.hpp"
#include "oncoclip/error.hpp"
#include "oncoclip/losses.hpp"
#include "oncoclip/random.hpp"
#include "oncoclip/retrieval.hpp"
#include "oncoclip/survival.hpp"
#include "oncoclip/synth.hpp"
#include "oncoclip/textmetrics.hpp"
#include "oncoclip/train.hpp"
#include "oncoclip/volume.hpp"
#include "oncoclip/zeroshot.hpp"

#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"
#include "support/survival_oracles.hpp"

using namespace oncoclip;
using namespace oncoclip::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
  std::function<void()> prepare;  // shared setup, not timed
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

double contract(const Matrix& y, const Matrix& dy) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * dy.data[i];
  return s;
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_conformance() {
  double worst = 0.0;
  std::string where;
  auto track = [&](double e, const char* what) {
    if (e > worst) worst = e, where = what;
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);

    Matrix z = random_matrix(6, 5, rng);
    std::vector<int> y(6);
    for (auto& v : y) v = static_cast<int>(rng.below(5));
    y[3] = loss::kMissingLabel;
    for (auto red : {loss::Reduction::sum, loss::Reduction::mean}) {
      const auto r = loss::multitask_ce(z, y, red);
      track(max_relative_error(std::span<double>(z.data), r.grad.data,
                               [&] { return loss::multitask_ce(z, y, red).value; }),
            "multitask_ce");
    }

    Matrix ml = random_matrix(6, 10, rng);
    std::vector<std::uint32_t> targets(6);
    for (auto& t : targets) t = static_cast<std::uint32_t>(rng.below(10));
    const auto mr = loss::mlm_loss_from_logits(ml, targets, 2, 3);
    track(max_relative_error(std::span<double>(ml.data), mr.grad.data,
                             [&] { return loss::mlm_loss_from_logits(ml, targets, 2, 3).value; }),
          "mlm");

    Matrix ha = random_matrix(4, 6, rng), hb = random_matrix(4, 6, rng);
    for (auto variant : {loss::SimcseVariant::standard, loss::SimcseVariant::as_written}) {
      const auto r = loss::simcse_loss(ha, hb, 0.2, variant);
      auto f = [&] { return loss::simcse_loss(ha, hb, 0.2, variant).value; };
      track(max_relative_error(std::span<double>(ha.data), r.grad_a.data, f), "simcse");
      track(max_relative_error(std::span<double>(hb.data), r.grad_b.data, f), "simcse");
    }

    // InfoNCE composed with row normalisation, so the cosine path is covered too.
    Matrix a = random_matrix(5, 4, rng), b = random_matrix(5, 4, rng);
    std::vector<double> lit{rng.uniform(0.0, 3.0)};
    auto clip = [&] { return loss::clip_infonce(nn::l2_normalize_rows(a), nn::l2_normalize_rows(b), lit[0]).value; };
    std::vector<double> na, nb;
    const Matrix u = nn::l2_normalize_rows(a, &na), v = nn::l2_normalize_rows(b, &nb);
    const auto cr = loss::clip_infonce(u, v, lit[0]);
    track(max_relative_error(std::span<double>(a.data), nn::l2_normalize_rows_backward(u, na, cr.grad_u).data, clip),
          "infonce");
    track(max_relative_error(std::span<double>(b.data), nn::l2_normalize_rows_backward(v, nb, cr.grad_v).data, clip),
          "infonce");
    const std::vector<double> gt{cr.grad_log_inv_tau};
    track(max_relative_error(lit, gt, clip), "infonce temperature");

    std::vector<double> eta(15), time(15);
    std::vector<int> ev(15);
    for (std::size_t i = 0; i < 15; ++i) {
      eta[i] = rng.normal();
      time[i] = static_cast<double>(rng.integer(1, 6));
      ev[i] = rng.bernoulli(0.7) ? 1 : 0;
    }
    ev[0] = 1;
    for (auto red : {loss::Reduction::sum, loss::Reduction::mean}) {
      const auto r = loss::cox_partial_loglik(eta, time, ev, red);
      track(max_relative_error(eta, r.grad, [&] { return loss::cox_partial_loglik(eta, time, ev, red).value; }),
            "cox");
    }

    for (auto out_act : {nn::Activation::identity, nn::Activation::tanh}) {
      nn::Mlp m = nn::Mlp::stack(5, {7, 6}, 3, nn::Activation::tanh, out_act);
      m.init_uniform(seed);
      Matrix x = random_matrix(4, 5, rng);
      const Matrix dy = random_matrix(4, 3, rng);
      nn::MlpCache cache;
      m.forward(x, &cache);
      std::vector<double> grad(m.param_count(), 0.0);
      const Matrix dx = m.backward(cache, dy, grad);
      auto f = [&] { return contract(m.forward(x), dy); };
      track(max_relative_error(m.params(), grad, f), "mlp params");
      track(max_relative_error(std::span<double>(x.data), dx.data, f), "mlp input");
    }

    Matrix xn = random_matrix(3, 4, rng);
    const Matrix dyn = random_matrix(3, 4, rng);
    std::vector<double> norms;
    const Matrix yn = nn::l2_normalize_rows(xn, &norms);
    track(max_relative_error(std::span<double>(xn.data), nn::l2_normalize_rows_backward(yn, norms, dyn).data,
                             [&] { return contract(nn::l2_normalize_rows(xn), dyn); }),
          "l2 normalise");

    nn::TextEncoder te = nn::TextEncoder::make(8, 3, 0.3, seed);
    const std::vector<std::uint32_t> toks{1, 4, 4, 7};
    nn::TextCache tc;
    Rng draw(seed + 100);
    nn::forward_text(te, toks, &draw, &tc);
    const std::vector<double> dyt{rng.normal(), rng.normal(), rng.normal()};
    Matrix gtab(8, 3);
    nn::backward_text(te, tc, dyt, gtab);
    track(max_relative_error(std::span<double>(te.table.data), gtab.data,
                             [&] {
                               Rng replay(seed + 100);
                               const auto e = nn::forward_text(te, toks, &replay);
                               return e[0] * dyt[0] + e[1] * dyt[1] + e[2] * dyt[2];
                             }),
          "text encoder");
  }
  return {worst < 1e-5, fmt("max relative error %.3g (%s), 10 seeds", worst, where.c_str())};
}

// ---- 2 -------------------------------------------------------------------

Outcome closed_forms() {
  const Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
  const double infonce = loss::clip_infonce(eye, eye, 0.0).value;
  const Matrix zeros(3, 4);
  const std::vector<int> labels{0, 1, 3};
  const double ce = loss::multitask_ce(zeros, labels, loss::Reduction::sum).value;
  loss::MlmBatch mb;
  mb.samples = 2;
  mb.masked_per_sample = 2;
  mb.probs = Matrix(4, 10);
  for (auto& p : mb.probs.data) p = 0.1;
  mb.targets = {0, 3, 7, 9};
  const double mlm = loss::mlm_loss(mb).value;
  const double simcse = loss::simcse_loss(eye, eye, 1.0, loss::SimcseVariant::as_written).value;
  const std::vector<double> eta{0.0, 0.0}, t{1.0, 2.0};
  const std::vector<int> e{1, 0};
  const double cox = loss::cox_partial_loglik(eta, t, e).value;

  // Per-sample loss is -log(e / (e + 1)) in each direction; the two directions add.
  const double infonce_closed = 2.0 * std::log1p(std::exp(-1.0));
  const bool ok = std::abs(infonce - infonce_closed) <= 1e-6 && std::abs(infonce - 0.62652) < 5e-6 && std::abs(ce - 3.0 * std::log(4.0)) <= 1e-9 &&
                  std::abs(mlm - std::log(10.0)) <= 1e-9 && std::abs(simcse + 1.0) <= 1e-9 &&
                  std::abs(cox - std::log(2.0)) <= 1e-9;
  return {ok, fmt("infonce %.8f (closed form %.8f), ce %.12f, mlm %.12f, simcse %.12f, cox %.12f", infonce, infonce_closed, ce, mlm, simcse, cox)};
}

// ---- 3 -------------------------------------------------------------------

Outcome survival_oracles() {
  Rng rng(2024);
  std::size_t checked = 0, mismatched = 0;
  double worst = 0.0;
  auto compare = [&](double got, double want) {
    ++checked;
    worst = std::max(worst, std::abs(got - want));
    if (!close(got, want)) ++mismatched;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(59);
    Cohort c = random_cohort(rng, n);
    c.event[0] = 1;
    c.time[0] = 1;
    c.time[1] = 12;
    c.event[1] = 0;
    const auto g = survival::censoring_km(c.time, c.event);
    compare(survival::harrell_cindex(c.time, c.event, c.risk), harrell_brute(c));
    const double tau = static_cast<double>(rng.integer(2, 12));
    try {
      compare(survival::ipcw_cindex(g, c.time, c.event, c.risk, tau), uno_brute(c, tau));
    } catch (const UndefinedMetric&) {
    }
    const double t_eval = static_cast<double>(rng.integer(1, 11));
    const std::vector<double> at{t_eval};
    try {
      compare(survival::cumulative_dynamic_auc(g, c.time, c.event, c.risk, at)[0], cd_auc_brute(c, t_eval));
    } catch (const UndefinedMetric&) {
    }
    std::vector<double> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(rng.uniform());
    compare(survival::ipcw_brier(g, s, c.time, c.event, t_eval), brier_brute(c, s, t_eval));
  }
  return {mismatched == 0, fmt("%zu comparisons over 200 instances, %zu mismatches, max |diff| %.3g", checked,
                               mismatched, worst)};
}

// ---- 4 -------------------------------------------------------------------

Outcome cox_recovery() {
  std::size_t inside = 0;
  double abs_err = 0.0, worst_gap = 0.0;
  std::string betas;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = synth::gen_cohort(2000, seed);
    const std::size_t d = c.config.latent_dim;
    Matrix z(c.size(), d);
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) z(i, k) = c.patients[i].z[k];
    const auto t = c.times();
    const auto e = c.events();
    const auto fit = survival::cox_fit(z, t, e);
    const double b = fit.beta[1];
    if (b >= 0.9 && b <= 1.1) ++inside;
    abs_err += std::abs(b - 1.0);
    std::vector<double> lp(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) lp[i] = dot(z.row(i), fit.beta);
    const auto oracle = synth::oracle_scores(c);
    const double gap = std::abs(survival::harrell_cindex(t, e, lp) - survival::harrell_cindex(t, e, oracle.linear_predictor));
    worst_gap = std::max(worst_gap, gap);
    betas += fmt("%s%.3f", seed ? " " : "", b);
  }
  abs_err /= 5.0;
  return {inside >= 4 && abs_err < 0.06 && worst_gap <= 0.02,
          fmt("beta [%s], %zu/5 in [0.9,1.1], mean |b-1| %.4f, max C gap %.4f", betas.c_str(), inside, abs_err,
              worst_gap)};
}

// ---- 5 -------------------------------------------------------------------

Outcome logrank_calibration() {
  Rng rng(5150);
  const std::size_t sims = 1000, n = 120;
  std::size_t rejected = 0;
  for (std::size_t s = 0; s < sims; ++s) {
    std::vector<double> time(n);
    std::vector<int> event(n), group(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = rng.exponential(0.1), cens = rng.exponential(0.04);
      time[i] = std::min(t, cens);
      event[i] = t <= cens ? 1 : 0;
      group[i] = i < n / 2 ? 1 : 0;
    }
    rng.shuffle(group.begin(), group.end());
    if (survival::logrank_test(time, event, group).p < 0.05) ++rejected;
  }
  const double rate = static_cast<double>(rejected) / static_cast<double>(sims);
  return {std::abs(rate - 0.05) <= 0.02, fmt("rejection rate %.3f over %zu permutation-null simulations", rate, sims)};
}

// ---- 6 -------------------------------------------------------------------

Outcome bootstrap_coverage() {
  const double d = 1.0;
  const double truth = 0.5 * std::erfc(-(d / std::numbers::sqrt2) / std::numbers::sqrt2);
  Rng rng(606);
  std::size_t covered = 0;
  const std::size_t trials = 200;
  for (std::size_t k = 0; k < trials; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
      y.push_back(i < 100 ? 1 : 0);
      s.push_back(rng.normal() + (i < 100 ? d : 0.0));
    }
    const auto ci = metrics::bootstrap_auc(s, y, 1000, derive_seed(606, k));
    if (ci.lo <= truth && truth <= ci.hi) ++covered;
  }
  const double rate = static_cast<double>(covered) / static_cast<double>(trials);
  return {std::abs(rate - 0.95) <= 0.03, fmt("coverage %.3f over %zu trials, true AUC %.4f", rate, trials, truth)};
}

// ---- 7, 8 ----------------------------------------------------------------

struct ContrastiveRun {
  synth::SynthCohort cohort;
  nn::TextEncoder text;
  train::Stage2Result result;
  std::vector<std::size_t> val;  // patient indices
  double seconds = 0.0;
};

std::vector<train::PairedSample> paired(const synth::SynthCohort& c, const nn::TextEncoder& text, std::size_t begin,
                                        std::size_t end) {
  std::vector<train::PairedSample> out;
  for (std::size_t i = begin; i < end; ++i) {
    train::PairedSample s;
    const auto& p = c.patients[i];
    for (std::size_t k = 0; k < p.phase_tags.size(); ++k)
      s.phases.set(train::phase_from_tag(p.phase_tags[k]), p.phase_features[k]);
    for (std::size_t v = 0; v < 5; ++v) s.text.push_back(nn::forward_text(text, c.tokens(i, v), nullptr));
    out.push_back(std::move(s));
  }
  return out;
}

const ContrastiveRun& contrastive_run() {
  static std::optional<ContrastiveRun> run;
  if (run) return *run;
  const auto start = std::chrono::steady_clock::now();
  ContrastiveRun r;
  const std::uint64_t seed = 0;
  r.cohort = synth::gen_cohort(640, seed);
  r.text = nn::TextEncoder::make(synth::kVocabSize, 32, 0.0, derive_seed(seed, 200));
  const auto tr = paired(r.cohort, r.text, 0, 512), va = paired(r.cohort, r.text, 512, 640);
  for (std::size_t i = 512; i < 640; ++i) r.val.push_back(i);

  train::Stage2Config cfg;
  cfg.epochs = 100;
  cfg.batch_size = 128;
  cfg.backbone_lr = 1e-3;
  cfg.projection_lr = 5e-3;
  cfg.seed = seed;
  auto enc = nn::ImageEncoder::make(r.cohort.config.feature_dim, {32}, derive_seed(seed, 100));
  auto proj = nn::ProjectionHead::make(enc.feature_dim(), r.text.dim(), derive_seed(seed, 102));
  r.result = train::train_stage2(tr, va, enc, proj, cfg);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  run = std::move(r);
  return *run;
}

Outcome contrastive_sanity() {
  const auto& r = contrastive_run();
  const auto& log = r.result.log;
  if (log.size() != 101) return {false, fmt("expected 101 log entries, got %zu", log.size())};
  std::vector<double> blocks;
  for (std::size_t b = 0; b < 10; ++b) {
    double s = 0.0;
    for (std::size_t e = 1 + 10 * b; e <= 10 * (b + 1); ++e) s += log[e].loss;
    blocks.push_back(s / 10.0);
  }
  bool decreasing = true;
  for (std::size_t b = 1; b < blocks.size(); ++b) decreasing = decreasing && blocks[b] < blocks[b - 1];
  const double final_metric = log.back().metric;
  std::string trace;
  for (double b : blocks) trace += fmt(" %.4f", b);
  return {r.result.best_metric >= 0.5 && decreasing,
          fmt("held-out mean R@1 best %.3f (epoch %zu), final %.3f; 10-epoch loss averages%s, %s", r.result.best_metric,
              r.result.best_epoch, final_metric, trace.c_str(),
              decreasing ? "strictly decreasing" : "NOT strictly decreasing")};
}

// Templates pad the descriptor with every multiset of up to three filler words.
zeroshot::PromptSet factor_prompts() {
  std::vector<std::string> fillers;
  for (std::size_t k = 0; k < synth::filler_count(); ++k) fillers.push_back(synth::token_word(synth::filler_token(k)));
  std::vector<std::string> templates{"{}"};
  for (std::size_t a = 0; a < fillers.size(); ++a) {
    templates.push_back(fillers[a] + " {}");
    for (std::size_t b = a; b < fillers.size(); ++b) {
      templates.push_back(fillers[a] + " {} " + fillers[b]);
      for (std::size_t c = b; c < fillers.size(); ++c) templates.push_back(fillers[a] + " " + fillers[b] + " {} " + fillers[c]);
    }
  }
  const std::string m = "q" + std::to_string(synth::kMalignancyAttribute + 1) + "c";
  return zeroshot::expand_prompts(
      templates, {"benign", "malignant"},
      {{m + "0", m + "1", m + "2", m + "0 " + m + "1", m + "1 " + m + "2"},
       {m + "3", m + "4", m + "3 " + m + "4", m + "3 " + m + "3 " + m + "4", m + "3 " + m + "4 " + m + "4"}});
}

Outcome zeroshot_sanity() {
  const auto& r = contrastive_run();
  auto ps = factor_prompts();
  zeroshot::embed_prompts(ps, r.text, zeroshot::Vocabulary(synth::vocabulary()));
  Matrix x(r.val.size(), r.cohort.config.feature_dim);
  std::vector<int> labels;
  for (std::size_t i = 0; i < r.val.size(); ++i) {
    const auto& p = r.cohort.patients[r.val[i]];
    std::copy(p.x.begin(), p.x.end(), x.row(i).begin());
    labels.push_back(p.malignant);
  }
  const Matrix u = train::embed_images(r.result.encoder, r.result.projection, x);
  const double max_auc = metrics::roc_auc(zeroshot::zs_scores(zeroshot::zs_max_similarity(u, ps)), labels);
  const auto st = zeroshot::zs_stochastic(u, labels, ps, 1000, 8);
  const bool ok = max_auc >= 0.90 && std::abs(st.mean - max_auc) <= 0.10;
  return {ok, fmt("%zu templates, max-similarity AUC %.4f, stochastic mean %.4f [%.4f, %.4f], gap %.4f",
                  ps.templates.size(), max_auc, st.mean, st.lo, st.hi, std::abs(st.mean - max_auc))};
}

// ---- 9 -------------------------------------------------------------------

volume::Volume3D random_volume(Rng& rng) {
  const volume::Index3 dims{static_cast<std::size_t>(rng.integer(30, 110)), static_cast<std::size_t>(rng.integer(30, 110)),
                            static_cast<std::size_t>(rng.integer(6, 40))};
  const volume::Vec3 spacing{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.6, 6.0)};
  volume::Volume3D v(dims, spacing, {rng.normal(0, 50), rng.normal(0, 50), rng.normal(0, 50)});
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform(-1100.0, 1500.0));
  return v;
}

Outcome preprocessing_conformance() {
  using namespace oncoclip::volume;
  std::string fails;
  if (!(window_value(50) == 0.5 && window_value(-200) == 0.0 && window_value(300) == 1.0)) fails += " window";
  Rng rng(909);
  for (int trial = 0; trial < 4; ++trial) {
    const Volume3D v = random_volume(rng);
    // ROI from a mask blob on even trials, from a free point on odd ones.
    RoiPoint roi;
    if (trial % 2 == 0) {
      Mask3D m(v.dims, v.spacing, v.origin);
      const std::size_t cx = rng.below(v.dims[0]), cy = rng.below(v.dims[1]), cz = rng.below(v.dims[2]);
      for (std::size_t z = cz; z < std::min(cz + 3, v.dims[2]); ++z)
        for (std::size_t y = cy; y < std::min(cy + 4, v.dims[1]); ++y)
          for (std::size_t x = cx; x < std::min(cx + 4, v.dims[0]); ++x) m.at(x, y, z) = 3;
      roi = locate_roi_center(m, RoiStrategy::foreground_centroid);
    } else {
      roi.center = v.position(rng.uniform(0, static_cast<double>(v.dims[0] - 1)),
                              rng.uniform(0, static_cast<double>(v.dims[1] - 1)),
                              rng.uniform(0, static_cast<double>(v.dims[2] - 1)));
    }
    const Volume3D out = preprocess(v, roi);
    if (out.dims != kTargetDims || out.spacing != kTargetSpacing) fails += fmt(" prep-dims(%d)", trial);
    for (float x : out.voxels)
      if (!(x >= 0.0f && x <= 1.0f)) {
        fails += fmt(" prep-range(%d)", trial);
        break;
      }
    if (preprocess(v, roi).voxels != out.voxels) fails += fmt(" prep-repro(%d)", trial);

    if (center_crop(out, kPatchDims).dims != kPatchDims) fails += fmt(" center-crop(%d)", trial);
    AugConfig cfg;
    cfg.seed = 31 + static_cast<std::uint64_t>(trial);
    const Volume3D a = augment(out, cfg), b = augment(out, cfg);
    if (a.dims != kPatchDims) fails += fmt(" augment-dims(%d)", trial);
    if (a.voxels != b.voxels) fails += fmt(" augment-repro(%d)", trial);
  }
  return {fails.empty(), fails.empty() ? "window exact; 4 random inputs -> 140x140x32 @ 1x1x5 mm, patches 128x128x32, "
                                         "bit-reproducible"
                                       : "failed:" + fails};
}

// ---- 10 ------------------------------------------------------------------

Outcome metric_definitions() {
  Rng rng(1010);
  std::size_t bad_recall = 0, bad_auc = 0, bad_pr = 0, bad_youden = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    Matrix s(n, n);
    for (auto& x : s.data) x = static_cast<double>(rng.integer(-5, 5)) / 5.0;
    for (std::size_t k = 1; k <= n; ++k)
      for (auto d : {retrieval::Direction::i2t, retrieval::Direction::t2i})
        if (retrieval::recall_at_k(s, k, d) != recall_by_sort(s, k, d)) ++bad_recall;
  }
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng, 2 + rng.below(49));
    if (metrics::roc_auc(in.scores, in.labels) != auc_pairs(in.scores, in.labels)) ++bad_auc;
    if (metrics::pr_auc(in.scores, in.labels) != ap_sweep(in.scores, in.labels)) ++bad_pr;
    const auto y = metrics::youden_threshold(in.scores, in.labels);
    const auto o = youden_brute(in.scores, in.labels);
    if (y.threshold != o.threshold || y.j != o.j) ++bad_youden;
  }

  using text::tokenize;
  auto pair = [](const char* c, const char* r) { return text::TokenPair{tokenize(c), tokenize(r)}; };
  std::vector<std::pair<double, double>> hand{
      {text::bleu({pair("a b c d e", "a b c d e")}, 4).score, 1.0},
      {text::bleu({pair("a b c", "a b c")}, 2).score, 1.0},
      {text::bleu({pair("a b c", "a b d")}, 1).score, 2.0 / 3.0},
      {text::bleu({pair("a b c", "a b d")}, 2).score, std::sqrt(1.0 / 3.0)},
      {text::meteor_lite(pair("a b c", "a b c")).score, 1.0 - 0.5 / 27.0},
      {text::meteor_lite(pair("a b c", "d e f")).score, 0.0},
      {text::meteor_lite(pair("c a b", "a b c")).score, 1.0 - 0.5 * 8.0 / 27.0},
      {text::rouge_l(pair("a b c d", "a b c d")).f1, 1.0},
      {text::rouge_l(pair("a b c d", "a c d")).f1, 6.0 / 7.0},
      {text::rouge_l(pair("a b", "c d")).f1, 0.0},
  };
  std::size_t bad_text = 0;
  for (std::size_t k = 0; k < hand.size(); ++k)
    if (std::abs(hand[k].first - hand[k].second) > 1e-9) {
      ++bad_text;
      std::printf("  text example %zu: got %.12f, want %.12f\n", k, hand[k].first, hand[k].second);
    }
  const bool ok = bad_recall + bad_auc + bad_pr + bad_youden + bad_text == 0;
  return {ok, fmt("mismatches: recall@k %zu, auc %zu, prauc %zu, youden %zu, text examples %zu/%zu", bad_recall, bad_auc,
                  bad_pr, bad_youden, bad_text, hand.size())};
}

// ---- 11 ------------------------------------------------------------------

Outcome fusion_harness() {
  synth::SynthConfig sc;
  sc.phases = 4;
  const auto c = synth::gen_cohort(500, 11, sc);
  const std::size_t n_train = 350;
  const std::size_t d = sc.feature_dim;
  auto first_phase = [&](std::size_t i) { return c.patients[i].phase_features.front(); };

  train::FinetuneData tr, va;
  tr.inputs = Matrix(n_train, d);
  va.inputs = Matrix(c.size() - n_train, d);
  std::vector<train::PhaseSet> phases;
  std::vector<int> labels;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto f = first_phase(i);
    auto& dst = i < n_train ? tr : va;
    const std::size_t row = i < n_train ? i : i - n_train;
    std::copy(f.begin(), f.end(), dst.inputs.row(row).begin());
    dst.labels.push_back(c.patients[i].malignant);
    if (i >= n_train) {
      train::PhaseSet ps;
      const auto& p = c.patients[i];
      for (std::size_t k = 0; k < p.phase_tags.size(); ++k)
        ps.set(train::phase_from_tag(p.phase_tags[k]), p.phase_features[k]);
      phases.push_back(std::move(ps));
      labels.push_back(p.malignant);
    }
  }
  const auto enc = nn::ImageEncoder::make(d, {32}, 1101);
  train::FinetuneConfig fc;
  fc.batch_sizes = {50};
  fc.lrs = {5e-3};
  fc.epochs = 40;
  fc.seed = 11;
  const auto ft = train::finetune_head(enc, tr, va, fc);
  const auto report = train::fusion_ablation(ft.encoder, ft.head, phases, labels);

  bool ok = report.settings.size() == 4 && report.permutation_invariant;
  std::string detail;
  for (std::size_t k = 0; k < report.settings.size(); ++k) {
    const auto& s = report.settings[k];
    ok = ok && s.phases.size() == k + 1 && s.auc >= 0.0 && s.auc <= 1.0;
    detail += fmt("%s%s=%.4f", k ? ", " : "", std::string(s.phases.begin(), s.phases.end()).c_str(), s.auc);
  }
  return {ok, fmt("AUC by phase set: %s; permutation invariant: %s", detail.c_str(),
                  report.permutation_invariant ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient conformance", 30, gradient_conformance, {}},
      {2, "closed-form loss values", 1, closed_forms, {}},
      {3, "survival metric oracles", 60, survival_oracles, {}},
      {4, "Cox recovery", 60, cox_recovery, {}},
      {5, "log-rank calibration", 60, logrank_calibration, {}},
      {6, "bootstrap AUC coverage", 300, bootstrap_coverage, {}},
      {7, "contrastive training sanity", 300, contrastive_sanity, [] { contrastive_run(); }},
      {8, "zero-shot sanity", 60, zeroshot_sanity, [] { contrastive_run(); }},
      {9, "preprocessing conformance", 10, preprocessing_conformance, {}},
      {10, "metric definitions", 30, metric_definitions, {}},
      {11, "fusion ablation harness", 120, fusion_harness, {}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    double seconds = 0.0;
    try {
      if (c.prepare) c.prepare();
      const auto start = std::chrono::steady_clock::now();
      o = c.run();
      seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      // Training time for the shared contrastive run belongs to criterion 7.
      if (c.id == 7) seconds += contrastive_run().seconds;
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool in_time = seconds <= c.limit_s;
    if (!in_time) o.detail += fmt("; over the %.0f s limit", c.limit_s);
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("[%s] %2d %s: %s (%.2f s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
