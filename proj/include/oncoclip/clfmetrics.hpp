#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "oncoclip/linalg.hpp"

namespace oncoclip::metrics {

// Mann-Whitney AUC: P(s+ > s-) + 0.5 P(s+ == s-). Labels are 0/1.
// Throws UndefinedMetric when only one class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// One-vs-rest AUC per class of an N x C score table; empty for classes that
// are absent (or are the only class present).
std::vector<std::optional<double>> ovr_aucs(const Matrix& scores, std::span<const int> labels);

// Unweighted mean of the one-vs-rest AUCs; every class must be present.
double macro_ovr_auc(const Matrix& scores, std::span<const int> labels);

// Step-wise average precision over descending unique thresholds.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Counts with the rule "positive when score >= threshold".
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);

struct YoudenResult {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  double j = 0.0;
};

// Maximises sens + spec - 1 over the unique scores as thresholds. Ties go to
// higher sensitivity, then to the lower threshold.
YoudenResult youden_threshold(std::span<const double> scores, std::span<const int> labels);

inline constexpr std::size_t kDefaultResamples = 1000;
inline constexpr int kRedrawAttempts = 10;

struct BootstrapResult {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n_resamples = 0;
  std::uint64_t seed = 0;
  std::size_t redraws = 0;  // resamples that were undefined and drawn again
};

// Metric evaluated on a resample given as indices into the cohort. It must
// throw UndefinedMetric when it is undefined on that resample.
using ResampleMetric = std::function<double(std::span<const std::size_t>)>;

// Percentile bootstrap (2.5 / 97.5, linear interpolation between order
// statistics). Resample r uses its own seed derived from (seed, r); undefined
// resamples are redrawn up to kRedrawAttempts times each.
BootstrapResult bootstrap_ci(const ResampleMetric& metric, std::size_t n, std::size_t n_resamples = kDefaultResamples,
                             std::uint64_t seed = 0, double level = 0.95);

BootstrapResult bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                              std::size_t n_resamples = kDefaultResamples, std::uint64_t seed = 0);

// Linear-interpolation percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> values, double q);

}  // namespace oncoclip::metrics
