#pragma once

// Central finite-difference gradient checking for tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace oncoclip::testing {

inline constexpr double kFdStep = 1e-4;

// |a - n| / max(|a|, |n|, floor). The floor keeps components whose true
// gradient is ~0 from turning round-off into a huge relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Perturbs every entry of `x` and compares against `analytic`.
inline double max_relative_error(std::vector<double>& x, std::span<const double> analytic,
                                 const std::function<double()>& loss, double eps = kFdStep) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss();
    x[i] = keep - eps;
    const double down = loss();
    x[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

template <class Span>
double max_relative_error(Span x, std::span<const double> analytic, const std::function<double()>& loss,
                          double eps = kFdStep) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss();
    x[i] = keep - eps;
    const double down = loss();
    x[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace oncoclip::testing
