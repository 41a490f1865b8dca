#pragma once

// Exhaustive classification and retrieval metric oracles.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include "oncoclip/clfmetrics.hpp"
#include "oncoclip/random.hpp"
#include "oncoclip/retrieval.hpp"

namespace oncoclip::testing {

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Scores on a coarse grid so that ties are common.
inline Instance random_instance(Rng& rng, std::size_t n) {
  Instance in;
  do {
    in.scores.clear();
    in.labels.clear();
    for (std::size_t i = 0; i < n; ++i) {
      in.scores.push_back(static_cast<double>(rng.integer(0, 9)) / 10.0);
      in.labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
  } while (std::count(in.labels.begin(), in.labels.end(), 1) == 0 ||
           std::count(in.labels.begin(), in.labels.end(), 0) == 0);
  return in;
}

inline double auc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

inline metrics::Confusion count(const std::vector<double>& s, const std::vector<int>& y, double thr) {
  metrics::Confusion c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool p = s[i] >= thr;
    if (y[i] == 1) p ? ++c.tp : ++c.fn;
    else p ? ++c.fp : ++c.tn;
  }
  return c;
}

inline double ap_sweep(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double prev = 0.0, ap = 0.0;
  for (double t : thresholds) {
    const auto c = count(s, y, t);
    const double r = static_cast<double>(c.tp) / pos;
    ap += (r - prev) * (static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
    prev = r;
  }
  return ap;
}



struct YoudenOracle {
  double threshold = 0.0;
  double j = -2.0;
  double sensitivity = -1.0;
};

// Every observed score as a threshold: best J, then higher sensitivity, then
// lower threshold.
inline YoudenOracle youden_brute(const std::vector<double>& s, const std::vector<int>& y) {
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double neg = static_cast<double>(y.size()) - pos;
  YoudenOracle best;
  for (double t : std::set<double>(s.begin(), s.end())) {
    const auto c = count(s, y, t);
    const double sens = static_cast<double>(c.tp) / pos, spec = static_cast<double>(c.tn) / neg;
    const double j = sens + spec - 1.0;
    if (j > best.j || (j == best.j && sens > best.sensitivity)) best = {t, j, sens};
  }
  return best;
}

// Full sort of each query's candidates (stable, so equal scores keep index
// order) and a lookup of the partner's position.
inline double recall_by_sort(const Matrix& s, std::size_t k, retrieval::Direction d) {
  const std::size_t n = s.rows;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto score = [&](std::size_t j) { return d == retrieval::Direction::i2t ? s(q, j) : s(j, q); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), q) - order.begin());
    if (pos < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace oncoclip::testing
