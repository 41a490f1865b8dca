#include "oncoclip/survival.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "oncoclip/error.hpp"
#include "oncoclip/kernels.hpp"

namespace oncoclip::survival {

namespace {

constexpr double kStepTol = 1e-6;

void check_records(std::span<const double> time, std::span<const int> event, const char* who) {
  if (time.size() != event.size()) throw std::invalid_argument(std::string(who) + ": time and event differ in length");
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!(time[i] > 0.0) || !std::isfinite(time[i]))
      throw std::invalid_argument(std::string(who) + ": times must be positive and finite");
    if (event[i] != 0 && event[i] != 1) throw std::invalid_argument(std::string(who) + ": events must be 0/1");
  }
}

void check_scores(std::span<const double> v, std::size_t n, const char* who) {
  if (v.size() != n) throw std::invalid_argument(std::string(who) + ": score length differs from records");
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(who) + ": non-finite score");
}

std::vector<std::size_t> ascending_time(std::span<const double> time) {
  std::vector<std::size_t> idx(time.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });
  return idx;
}

KmCurve product_limit(std::span<const double> time, std::span<const int> event, bool reverse) {
  if (time.empty()) throw std::invalid_argument("km_estimate: no records");
  check_records(time, event, "km_estimate");
  const auto idx = ascending_time(time);
  KmCurve c;
  std::size_t at_risk = time.size();
  double s = 1.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double t = time[idx[i]];
    std::size_t d = 0, cens = 0;
    while (i < idx.size() && time[idx[i]] == t) {
      (event[idx[i]] == 1 ? d : cens) += 1;
      ++i;
    }
    if (!reverse) {
      if (d > 0) s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
    } else {
      const std::size_t risk = at_risk - d;
      if (cens > 0) s *= 1.0 - static_cast<double>(cens) / static_cast<double>(risk);
    }
    c.times.push_back(t);
    c.survival.push_back(s);
    c.at_risk.push_back(at_risk);
    c.events.push_back(reverse ? cens : d);
    c.censored.push_back(reverse ? d : cens);
    at_risk -= d + cens;
  }
  return c;
}

double censoring_weight_before(const KmCurve& g, double t, const char* who) {
  const double v = g.before(t);
  if (!(v > 0.0)) throw UndefinedMetric(std::string(who) + ": censoring survival is zero at t = " + std::to_string(t));
  return v;
}

}  // namespace

double KmCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double KmCurve::before(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

KmCurve km_estimate(std::span<const double> time, std::span<const int> event) {
  return product_limit(time, event, false);
}

KmCurve censoring_km(std::span<const double> time, std::span<const int> event) {
  return product_limit(time, event, true);
}

double chi2_sf_1df(double x) {
  if (!(x >= 0.0)) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

LogRank logrank_test(std::span<const double> time, std::span<const int> event, std::span<const int> group) {
  check_records(time, event, "logrank_test");
  if (group.size() != time.size()) throw std::invalid_argument("logrank_test: group length differs from records");
  std::size_t na = 0;
  for (int g : group) {
    if (g != 0 && g != 1) throw std::invalid_argument("logrank_test: group must be 0/1");
    na += static_cast<std::size_t>(g);
  }
  if (na == 0 || na == group.size()) throw std::invalid_argument("logrank_test: both groups must be non-empty");

  const auto idx = ascending_time(time);
  double n = static_cast<double>(time.size()), n_a = static_cast<double>(na);
  LogRank r;
  double any_events = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double t = time[idx[i]];
    double d = 0.0, d_a = 0.0, leave = 0.0, leave_a = 0.0;
    while (i < idx.size() && time[idx[i]] == t) {
      const std::size_t k = idx[i];
      if (event[k] == 1) {
        d += 1.0;
        if (group[k] == 1) d_a += 1.0;
      }
      leave += 1.0;
      if (group[k] == 1) leave_a += 1.0;
      ++i;
    }
    if (d > 0.0) {
      const double frac = n_a / n;
      r.observed_a += d_a;
      r.expected_a += d * frac;
      if (n > 1.0) r.variance += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
      any_events += d;
    }
    n -= leave;
    n_a -= leave_a;
  }
  if (any_events == 0.0) throw UndefinedMetric("logrank_test: no events in either group");
  const double diff = r.observed_a - r.expected_a;
  if (r.variance > 0.0) {
    r.chi2 = diff * diff / r.variance;
  } else {
    r.chi2 = 0.0;
  }
  r.p = chi2_sf_1df(r.chi2);
  return r;
}

LogRank logrank_test(std::span<const double> time_a, std::span<const int> event_a, std::span<const double> time_b,
                     std::span<const int> event_b) {
  if (time_a.empty() || time_b.empty()) throw std::invalid_argument("logrank_test: both groups must be non-empty");
  std::vector<double> t(time_a.begin(), time_a.end());
  t.insert(t.end(), time_b.begin(), time_b.end());
  std::vector<int> e(event_a.begin(), event_a.end());
  e.insert(e.end(), event_b.begin(), event_b.end());
  std::vector<int> g(t.size(), 0);
  std::fill(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(time_a.size()), 1);
  if (e.size() != t.size()) throw std::invalid_argument("logrank_test: time and event differ in length");
  return logrank_test(t, e, g);
}

CoxDerivatives cox_derivatives(const Matrix& x, std::span<const double> time, std::span<const int> event,
                               std::span<const double> beta) {
  const std::size_t n = x.rows, p = x.cols;
  if (time.size() != n) throw std::invalid_argument("cox_derivatives: row count differs from records");
  if (beta.size() != p) throw std::invalid_argument("cox_derivatives: beta length differs from covariates");
  check_records(time, event, "cox_derivatives");

  std::vector<double> eta(n);
  for (std::size_t i = 0; i < n; ++i) eta[i] = dot(x.row(i), beta);
  const double shift = n ? *std::max_element(eta.begin(), eta.end()) : 0.0;

  // Sweep from the latest time backwards so the risk set grows; tied times
  // enter together before their events are scored.
  auto idx = ascending_time(time);
  std::reverse(idx.begin(), idx.end());
  CoxDerivatives out;
  out.score.assign(p, 0.0);
  out.information = Matrix(p, p);
  double s0 = 0.0;
  std::vector<double> s1(p, 0.0), s2(p * p, 0.0);
  std::size_t i = 0;
  while (i < n) {
    const double t = time[idx[i]];
    std::size_t j = i;
    double d = 0.0;
    std::vector<double> xsum(p, 0.0);
    double eta_sum = 0.0;
    for (; j < n && time[idx[j]] == t; ++j) {
      const std::size_t k = idx[j];
      const double w = std::exp(eta[k] - shift);
      s0 += w;
      for (std::size_t a = 0; a < p; ++a) {
        s1[a] += w * x(k, a);
        for (std::size_t b = 0; b < p; ++b) s2[a * p + b] += w * x(k, a) * x(k, b);
      }
      if (event[k] == 1) {
        d += 1.0;
        eta_sum += eta[k];
        for (std::size_t a = 0; a < p; ++a) xsum[a] += x(k, a);
      }
    }
    if (d > 0.0) {
      out.loglik += eta_sum - d * (std::log(s0) + shift);
      for (std::size_t a = 0; a < p; ++a) {
        const double mean_a = s1[a] / s0;
        out.score[a] += xsum[a] - d * mean_a;
        for (std::size_t b = 0; b < p; ++b)
          out.information(a, b) += d * (s2[a * p + b] / s0 - mean_a * (s1[b] / s0));
      }
    }
    i = j;
  }
  return out;
}

CoxFit cox_fit(const Matrix& x, std::span<const double> time, std::span<const int> event, const CoxOptions& opts) {
  const std::size_t p = x.cols;
  if (p == 0) throw std::invalid_argument("cox_fit: no covariates");
  if (x.rows == 0) throw std::invalid_argument("cox_fit: no records");
  check_records(time, event, "cox_fit");
  if (std::count(event.begin(), event.end(), 1) == 0) throw std::invalid_argument("cox_fit: no events");
  for (double v : x.data)
    if (!std::isfinite(v)) throw std::invalid_argument("cox_fit: non-finite covariate");

  auto to_eigen = [p](const Matrix& m) {
    Eigen::MatrixXd e(p, p);
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b) e(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = m(a, b);
    return e;
  };

  CoxFit fit;
  fit.beta.assign(p, 0.0);
  CoxDerivatives cur = cox_derivatives(x, time, event, fit.beta);
  {
    const Eigen::MatrixXd info = to_eigen(cur.information);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
    lu.setThreshold(1e-10);
    if (lu.rank() < static_cast<Eigen::Index>(p))
      throw std::invalid_argument("cox_fit: design is rank-deficient on the risk sets");
  }
  fit.loglik_null = cur.loglik;
  fit.loglik_trace.push_back(cur.loglik);

  for (std::size_t iter = 0; iter < opts.max_iter; ++iter) {
    const Eigen::MatrixXd info = to_eigen(cur.information);
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) {
      // The information was full rank at beta = 0; losing it later means the
      // coefficients ran off towards a monotone-likelihood asymptote.
      fit.diverged = true;
      break;
    }
    Eigen::VectorXd u(static_cast<Eigen::Index>(p));
    for (std::size_t a = 0; a < p; ++a) u(static_cast<Eigen::Index>(a)) = cur.score[a];
    const Eigen::VectorXd step = llt.solve(u);

    double scale = 1.0;
    std::vector<double> trial(p);
    CoxDerivatives next;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      for (std::size_t a = 0; a < p; ++a) trial[a] = fit.beta[a] + scale * step(static_cast<Eigen::Index>(a));
      next = cox_derivatives(x, time, event, trial);
      if (std::isfinite(next.loglik) && next.loglik >= cur.loglik) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    ++fit.iterations;
    if (!accepted) {
      // No ascent possible along the Newton direction: at a maximum up to
      // round-off.
      fit.converged = true;
      break;
    }
    const double change = next.loglik - cur.loglik;
    double moved = 0.0;
    for (std::size_t a = 0; a < p; ++a) moved = std::max(moved, std::abs(trial[a] - fit.beta[a]));
    fit.beta = trial;
    cur = std::move(next);
    fit.loglik_trace.push_back(cur.loglik);
    if (std::any_of(fit.beta.begin(), fit.beta.end(), [&](double b) { return std::abs(b) > opts.max_abs_beta; })) {
      fit.diverged = true;
      break;
    }
    // Under monotone likelihood the change vanishes while the steps stay
    // large, so both must be small.
    if (change < opts.tol && moved < kStepTol) {
      fit.converged = true;
      break;
    }
  }

  fit.loglik = cur.loglik;
  fit.covariance = Matrix(p, p);
  fit.se.assign(p, std::numeric_limits<double>::quiet_NaN());
  const Eigen::MatrixXd info = to_eigen(cur.information);
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)));
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = 0; b < p; ++b)
        fit.covariance(a, b) = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      fit.se[a] = std::sqrt(cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)));
    }
  } else {
    fit.converged = false;
  }
  for (std::size_t a = 0; a < p; ++a) {
    const double b = fit.beta[a], se = fit.se[a];
    fit.hazard_ratio.push_back(std::exp(b));
    fit.ci_lo.push_back(std::exp(b - 1.96 * se));
    fit.ci_hi.push_back(std::exp(b + 1.96 * se));
    const double z = b / se;
    fit.z.push_back(z);
    fit.p.push_back(std::erfc(std::abs(z) / std::sqrt(2.0)));
  }
  return fit;
}

double harrell_cindex(std::span<const double> time, std::span<const int> event, std::span<const double> risk) {
  check_records(time, event, "harrell_cindex");
  check_scores(risk, time.size(), "harrell_cindex");
  if (time.size() < 2) throw std::invalid_argument("harrell_cindex: need at least two subjects");
  const std::vector<double> ones(time.size(), 1.0);
  const auto s = kernels::concordance_pairs(time, event, risk, ones, std::numeric_limits<double>::infinity());
  if (s.comparable == 0.0) throw UndefinedMetric("harrell_cindex: no comparable pairs");
  return s.concordant / s.comparable;
}

std::vector<double> cumulative_dynamic_auc(const KmCurve& censoring, std::span<const double> time,
                                           std::span<const int> event, std::span<const double> risk,
                                           std::span<const double> eval_times) {
  check_records(time, event, "cumulative_dynamic_auc");
  check_scores(risk, time.size(), "cumulative_dynamic_auc");
  if (eval_times.empty()) throw std::invalid_argument("cumulative_dynamic_auc: no evaluation times");
  const double t_max = *std::max_element(time.begin(), time.end());
  std::vector<double> out;
  out.reserve(eval_times.size());
  for (double t : eval_times) {
    if (!(t < t_max) || !std::isfinite(t))
      throw std::invalid_argument("cumulative_dynamic_auc: evaluation time must be below the last follow-up time");
    std::vector<double> case_risk, case_w, ctrl_risk;
    for (std::size_t i = 0; i < time.size(); ++i) {
      if (time[i] <= t && event[i] == 1) {
        case_risk.push_back(risk[i]);
        case_w.push_back(1.0 / censoring_weight_before(censoring, time[i], "cumulative_dynamic_auc"));
      } else if (time[i] > t) {
        ctrl_risk.push_back(risk[i]);
      }
    }
    if (case_risk.empty() || ctrl_risk.empty())
      throw UndefinedMetric("cumulative_dynamic_auc: no cases or no controls at t = " + std::to_string(t));
    const auto s = kernels::case_control_pairs(case_risk, case_w, ctrl_risk);
    out.push_back(s.concordant / s.comparable);
  }
  return out;
}

double ipcw_cindex(const KmCurve& censoring, std::span<const double> time, std::span<const int> event,
                   std::span<const double> risk, double tau) {
  check_records(time, event, "ipcw_cindex");
  check_scores(risk, time.size(), "ipcw_cindex");
  if (time.size() < 2) throw std::invalid_argument("ipcw_cindex: need at least two subjects");
  if (std::isnan(tau)) throw std::invalid_argument("ipcw_cindex: tau is NaN");
  std::vector<double> w(time.size(), 0.0);
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i] == 1 && time[i] < tau) {
      const double g = censoring_weight_before(censoring, time[i], "ipcw_cindex");
      w[i] = 1.0 / (g * g);
    }
  }
  const auto s = kernels::concordance_pairs(time, event, risk, w, tau);
  if (s.comparable == 0.0) throw UndefinedMetric("ipcw_cindex: no comparable pairs before tau");
  return s.concordant / s.comparable;
}

double ipcw_brier(const KmCurve& censoring, std::span<const double> predicted_survival, std::span<const double> time,
                  std::span<const int> event, double t) {
  check_records(time, event, "ipcw_brier");
  check_scores(predicted_survival, time.size(), "ipcw_brier");
  if (time.empty()) throw std::invalid_argument("ipcw_brier: no records");
  for (double s : predicted_survival)
    if (s < 0.0 || s > 1.0) throw std::invalid_argument("ipcw_brier: predictions must lie in [0, 1]");
  if (!std::isfinite(t) || !(t > 0.0)) throw std::invalid_argument("ipcw_brier: evaluation time must be positive");
  double sum = 0.0;
  double g_t = -1.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    const double s = predicted_survival[i];
    if (time[i] <= t && event[i] == 1) {
      sum += s * s / censoring_weight_before(censoring, time[i], "ipcw_brier");
    } else if (time[i] > t) {
      if (g_t < 0.0) {
        g_t = censoring.at(t);
        if (!(g_t > 0.0)) throw UndefinedMetric("ipcw_brier: censoring survival is zero at the evaluation time");
      }
      sum += (1.0 - s) * (1.0 - s) / g_t;
    }
  }
  return sum / static_cast<double>(time.size());
}

double BaselineHazard::hazard(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - times.begin()) - 1];
}

double BaselineHazard::survival(double t) const { return std::exp(-hazard(t)); }

BaselineHazard breslow_baseline(const CoxFit& fit, const Matrix& x, std::span<const double> time,
                                std::span<const int> event) {
  if (!fit.converged) throw StateError("breslow_baseline: the Cox fit did not converge");
  if (x.cols != fit.beta.size()) throw std::invalid_argument("breslow_baseline: covariate count differs from fit");
  if (x.rows != time.size()) throw std::invalid_argument("breslow_baseline: row count differs from records");
  check_records(time, event, "breslow_baseline");
  const std::size_t n = x.rows;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(dot(x.row(i), fit.beta));

  auto idx = ascending_time(time);
  // Suffix sums over the time-sorted order give each risk-set total.
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] + w[idx[k]];

  BaselineHazard base;
  double h = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = time[idx[i]];
    const double risk = suffix[i];
    double d = 0.0;
    std::size_t j = i;
    for (; j < n && time[idx[j]] == t; ++j) d += static_cast<double>(event[idx[j]]);
    if (d > 0.0) {
      h += d / risk;
      base.times.push_back(t);
      base.cumulative.push_back(h);
    }
    i = j;
  }
  return base;
}

double survival_at(const CoxFit& fit, const BaselineHazard& base, std::span<const double> x, double t) {
  if (!fit.converged) throw StateError("survival_at: the Cox fit did not converge");
  if (x.size() != fit.beta.size()) throw std::invalid_argument("survival_at: covariate count differs from fit");
  return std::exp(-base.hazard(t) * std::exp(dot(x, fit.beta)));
}

MedianSplit dichotomize_median(std::span<const double> risk) {
  if (risk.size() < 2) throw std::invalid_argument("dichotomize_median: need at least two scores");
  for (double r : risk)
    if (!std::isfinite(r)) throw std::invalid_argument("dichotomize_median: non-finite score");
  std::vector<double> sorted(risk.begin(), risk.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  MedianSplit out;
  out.median = n % 2 == 1 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
  out.high.reserve(n);
  for (double r : risk) out.high.push_back(r > out.median ? 1 : 0);
  return out;
}

}  // namespace oncoclip::survival
