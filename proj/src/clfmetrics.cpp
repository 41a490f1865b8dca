#include "oncoclip/clfmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "oncoclip/error.hpp"
#include "oncoclip/parallel.hpp"
#include "oncoclip/random.hpp"

namespace oncoclip::metrics {

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels, const char* who) {
  if (scores.size() != labels.size())
    throw std::invalid_argument(std::string(who) + ": scores and labels differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw std::invalid_argument(std::string(who) + ": non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument(std::string(who) + ": labels must be 0/1");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

// Mann-Whitney U for the positives via midranks; U counts ties as 1/2.
double auc_unchecked(std::span<const double> scores, std::span<const int> labels) {
  const auto idx = order_by_score(scores, false);
  double pos = 0.0, neg = 0.0, u = 0.0;
  // Walk groups of tied scores; each positive beats all negatives seen so far
  // and ties with the negatives in its own group.
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    double gp = 0.0, gn = 0.0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? gp : gn) += 1.0;
      ++j;
    }
    u += gp * neg + 0.5 * gp * gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("roc_auc: both classes must be present");
  return u / (pos * neg);
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "roc_auc");
  return auc_unchecked(scores, labels);
}

std::vector<std::optional<double>> ovr_aucs(const Matrix& scores, std::span<const int> labels) {
  if (scores.rows != labels.size()) throw std::invalid_argument("ovr_aucs: row count differs from labels");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= scores.cols)
      throw std::invalid_argument("ovr_aucs: label outside class range");
  for (double s : scores.data)
    if (!std::isfinite(s)) throw std::invalid_argument("ovr_aucs: non-finite score");
  std::vector<std::optional<double>> out(scores.cols);
  std::vector<double> col(scores.rows);
  std::vector<int> bin(scores.rows);
  for (std::size_t c = 0; c < scores.cols; ++c) {
    std::size_t npos = 0;
    for (std::size_t i = 0; i < scores.rows; ++i) {
      col[i] = scores(i, c);
      bin[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
      npos += static_cast<std::size_t>(bin[i]);
    }
    if (npos == 0 || npos == scores.rows) continue;
    out[c] = auc_unchecked(col, bin);
  }
  return out;
}

double macro_ovr_auc(const Matrix& scores, std::span<const int> labels) {
  const auto per = ovr_aucs(scores, labels);
  if (per.empty()) throw std::invalid_argument("macro_ovr_auc: no classes");
  double sum = 0.0;
  for (std::size_t c = 0; c < per.size(); ++c) {
    if (!per[c]) throw UndefinedMetric("macro_ovr_auc: class " + std::to_string(c) + " has no one-vs-rest AUC");
    sum += *per[c];
  }
  return sum / static_cast<double>(per.size());
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "pr_auc");
  const double total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0.0) throw UndefinedMetric("pr_auc: no positives");
  const auto idx = order_by_score(scores, true);
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_binary(scores, labels, "confusion_at");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1)
      ++(pred ? c.tp : c.fn);
    else
      ++(pred ? c.fp : c.tn);
  }
  return c;
}

YoudenResult youden_threshold(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "youden_threshold");
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("youden_threshold: both classes must be present");

  // Ascending sweep: at the start of each tied group, everything from the
  // group onwards is predicted positive.
  const auto idx = order_by_score(scores, false);
  double fn = 0.0, tn = 0.0;
  YoudenResult best;
  bool have = false;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double thr = scores[idx[i]];
    const double sens = (pos - fn) / pos;
    const double spec = tn / neg;
    const double j = sens + spec - 1.0;
    // Thresholds ascend, so a tie in J and sensitivity keeps the earlier one.
    if (!have || j > best.j || (j == best.j && sens > best.sensitivity)) {
      const double tp = pos - fn, fp = neg - tn;
      best = {thr, sens, spec, 2.0 * tp / (2.0 * tp + fp + fn), j};
      have = true;
    }
    while (i < idx.size() && scores[idx[i]] == thr) {
      (labels[idx[i]] == 1 ? fn : tn) += 1.0;
      ++i;
    }
  }
  return best;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_ci(const ResampleMetric& metric, std::size_t n, std::size_t n_resamples, std::uint64_t seed,
                             double level) {
  if (n == 0) throw std::invalid_argument("bootstrap_ci: empty cohort");
  if (n_resamples == 0) throw std::invalid_argument("bootstrap_ci: n_resamples must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  BootstrapResult out;
  try {
    out.point = metric(all);
  } catch (const UndefinedMetric& e) {
    throw std::invalid_argument(std::string("bootstrap_ci: metric undefined on the full cohort: ") + e.what());
  }
  out.n_resamples = n_resamples;
  out.seed = seed;

  std::vector<double> values(n_resamples);
  std::vector<std::size_t> redraws(n_resamples, 0);
  parallel::for_each_index(n_resamples, [&](std::size_t r) {
    std::vector<std::size_t> idx(n);
    for (int attempt = 0; attempt < kRedrawAttempts; ++attempt) {
      Rng rng(derive_seed(seed, r, static_cast<std::uint64_t>(attempt)));
      for (auto& k : idx) k = rng.below(n);
      try {
        values[r] = metric(idx);
        redraws[r] = static_cast<std::size_t>(attempt);
        return;
      } catch (const UndefinedMetric&) {
      }
    }
    throw UndefinedMetric("bootstrap_ci: resample " + std::to_string(r) + " stayed undefined after " +
                          std::to_string(kRedrawAttempts) + " draws");
  });
  for (auto r : redraws) out.redraws += r;
  const double alpha = (1.0 - level) / 2.0;
  out.lo = percentile(values, alpha);
  out.hi = percentile(values, 1.0 - alpha);
  return out;
}

BootstrapResult bootstrap_auc(std::span<const double> scores, std::span<const int> labels, std::size_t n_resamples,
                              std::uint64_t seed) {
  check_binary(scores, labels, "bootstrap_auc");
  auto metric = [&](std::span<const std::size_t> idx) {
    std::vector<double> s(idx.size());
    std::vector<int> y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) s[k] = scores[idx[k]], y[k] = labels[idx[k]];
    return auc_unchecked(s, y);
  };
  return bootstrap_ci(metric, scores.size(), n_resamples, seed);
}

}  // namespace oncoclip::metrics
