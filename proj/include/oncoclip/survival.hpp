#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oncoclip/linalg.hpp"

namespace oncoclip::survival {

// Product-limit curve. `times` holds the distinct observed times (events or
// censorings); `survival[k]` is S just after times[k].
struct KmCurve {
  std::vector<double> times;
  std::vector<double> survival;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;
  std::vector<std::size_t> censored;

  // Right-continuous S(t); 1 before the first time.
  double at(double t) const;
  // Left limit S(t-).
  double before(double t) const;
};

KmCurve km_estimate(std::span<const double> time, std::span<const int> event);

// Kaplan-Meier of the censoring distribution. At a time with both events and
// censorings the events leave the censoring risk set first.
KmCurve censoring_km(std::span<const double> time, std::span<const int> event);

struct LogRank {
  double chi2 = 0.0;
  double p = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

// Two-group log-rank test (hypergeometric variance, 1 df). Throws
// UndefinedMetric when there are no events at all.
LogRank logrank_test(std::span<const double> time_a, std::span<const int> event_a, std::span<const double> time_b,
                     std::span<const int> event_b);
// Same test with a 0/1 group indicator per subject (1 = group A).
LogRank logrank_test(std::span<const double> time, std::span<const int> event, std::span<const int> group);

// Upper tail of the chi-square distribution with one degree of freedom.
double chi2_sf_1df(double x);

struct CoxOptions {
  std::size_t max_iter = 100;
  double tol = 1e-9;
  double max_abs_beta = 50.0;
};

struct CoxFit {
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> hazard_ratio;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::vector<double> z;
  std::vector<double> p;
  Matrix covariance;
  double loglik = 0.0;
  double loglik_null = 0.0;
  std::vector<double> loglik_trace;  // one entry per accepted iterate, starting at beta = 0
  std::size_t iterations = 0;
  bool converged = false;
  bool diverged = false;  // |beta| exceeded the guard; typical of perfect separation
};

// Breslow log partial likelihood, its gradient and the observed information
// at `beta`. Rows of x are subjects.
struct CoxDerivatives {
  double loglik = 0.0;
  std::vector<double> score;
  Matrix information;
};
CoxDerivatives cox_derivatives(const Matrix& x, std::span<const double> time, std::span<const int> event,
                               std::span<const double> beta);

// Newton-Raphson from beta = 0 with step halving. Throws std::invalid_argument
// for an empty event set or a rank-deficient design.
CoxFit cox_fit(const Matrix& x, std::span<const double> time, std::span<const int> event,
               const CoxOptions& opts = {});

// Harrell's C. Comparable pairs: the shorter time has an event; tied times
// count only when the partner is censored. Tied risks score 1/2.
double harrell_cindex(std::span<const double> time, std::span<const int> event, std::span<const double> risk);

// AUC(t) for each evaluation time. Cases (t_i <= t, event) are weighted by
// 1 / G(t_i-); controls are subjects with t_i > t.
std::vector<double> cumulative_dynamic_auc(const KmCurve& censoring, std::span<const double> time,
                                           std::span<const int> event, std::span<const double> risk,
                                           std::span<const double> eval_times);

// Uno-type concordance truncated at tau with weights 1 / G(t_i-)^2.
double ipcw_cindex(const KmCurve& censoring, std::span<const double> time, std::span<const int> event,
                   std::span<const double> risk, double tau);

// Graf's IPCW Brier score of predicted survival probabilities at time t.
double ipcw_brier(const KmCurve& censoring, std::span<const double> predicted_survival, std::span<const double> time,
                  std::span<const int> event, double t);

// Breslow cumulative baseline hazard as a step function.
struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> cumulative;

  double hazard(double t) const;
  double survival(double t) const;
};

BaselineHazard breslow_baseline(const CoxFit& fit, const Matrix& x, std::span<const double> time,
                                std::span<const int> event);

// S0(t)^exp(beta . x).
double survival_at(const CoxFit& fit, const BaselineHazard& base, std::span<const double> x, double t);

struct MedianSplit {
  double median = 0.0;
  std::vector<int> high;  // 1 when risk > median
};

MedianSplit dichotomize_median(std::span<const double> risk);

}  // namespace oncoclip::survival
