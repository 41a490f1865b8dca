#include "oncoclip/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace oncoclip::loss {

namespace {

double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void check_finite(const Matrix& m, const char* what) {
  for (double v : m.data)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

// Backward of row-wise normalisation y = x / |x| for raw x.
Matrix normalize_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double n = std::sqrt(dot(x.row(i), x.row(i)));
    double proj = 0.0;
    for (std::size_t k = 0; k < x.cols; ++k) proj += x(i, k) / n * dy(i, k);
    for (std::size_t k = 0; k < x.cols; ++k) dx(i, k) = (dy(i, k) - x(i, k) / n * proj) / n;
  }
  return dx;
}

Matrix normalize(const Matrix& x, const char* what) {
  Matrix y = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double n = std::sqrt(dot(x.row(i), x.row(i)));
    if (!(n > 0.0)) throw std::invalid_argument(std::string(what) + ": zero-norm embedding");
    for (auto& v : y.row(i)) v /= n;
  }
  return y;
}

}  // namespace

LogitLoss multitask_ce(const Matrix& logits, std::span<const int> labels, Reduction reduction) {
  if (labels.size() != logits.rows) throw std::invalid_argument("multitask_ce: label count does not match logits rows");
  check_finite(logits, "multitask_ce");
  LogitLoss out{0.0, Matrix(logits.rows, logits.cols)};
  std::size_t labelled = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const int y = labels[i];
    if (y == kMissingLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw std::invalid_argument("multitask_ce: label " + std::to_string(y) + " out of range");
    ++labelled;
    const auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    out.value += lse - row[static_cast<std::size_t>(y)];
    for (std::size_t j = 0; j < logits.cols; ++j) out.grad(i, j) = std::exp(row[j] - lse);
    out.grad(i, static_cast<std::size_t>(y)) -= 1.0;
  }
  if (reduction == Reduction::mean && labelled > 0) {
    const double inv = 1.0 / static_cast<double>(labelled);
    out.value *= inv;
    for (auto& g : out.grad.data) g *= inv;
  }
  return out;
}

MlmValue mlm_loss(const MlmBatch& batch) {
  const std::size_t rows = batch.samples * batch.masked_per_sample;
  if (batch.samples == 0 || batch.masked_per_sample == 0) throw std::invalid_argument("mlm_loss: need N >= 1 and M >= 1");
  if (batch.probs.rows != rows || batch.targets.size() != rows)
    throw std::invalid_argument("mlm_loss: probability rows must equal N * M");
  MlmValue out;
  double s = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto p = batch.probs.row(r);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mlm_loss: probability row does not sum to 1");
    if (batch.targets[r] >= batch.probs.cols) throw std::invalid_argument("mlm_loss: target id out of vocabulary");
    const double pt = p[batch.targets[r]];
    if (pt <= 0.0) {
      out.degenerate = true;
      out.value = std::numeric_limits<double>::infinity();
      return out;
    }
    s += std::log(pt);
  }
  out.value = -s / static_cast<double>(rows);
  return out;
}

LogitLoss mlm_loss_from_logits(const Matrix& logits, std::span<const std::uint32_t> targets, std::size_t samples,
                               std::size_t masked_per_sample) {
  const std::size_t rows = samples * masked_per_sample;
  if (rows == 0 || logits.rows != rows || targets.size() != rows)
    throw std::invalid_argument("mlm_loss_from_logits: logits rows must equal N * M >= 1");
  check_finite(logits, "mlm_loss_from_logits");
  LogitLoss out{0.0, Matrix(rows, logits.cols)};
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= logits.cols) throw std::invalid_argument("mlm_loss_from_logits: target id out of vocabulary");
    const auto row = logits.row(r);
    const double lse = log_sum_exp(row);
    out.value += (lse - row[targets[r]]) * inv;
    for (std::size_t j = 0; j < logits.cols; ++j) out.grad(r, j) = std::exp(row[j] - lse) * inv;
    out.grad(r, targets[r]) -= inv;
  }
  return out;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_sim: dimension mismatch");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("cosine_sim: zero vector");
  return dot(a, b) / (na * nb);
}

PairLoss simcse_loss(const Matrix& h, const Matrix& h_pos, double tau, SimcseVariant variant) {
  if (h.rows != h_pos.rows || h.cols != h_pos.cols) throw std::invalid_argument("simcse_loss: shape mismatch");
  if (!(tau > 0.0)) throw std::invalid_argument("simcse_loss: tau must be > 0");
  const std::size_t n = h.rows;
  if (n == 0) throw std::invalid_argument("simcse_loss: empty batch");
  if (variant == SimcseVariant::as_written && n < 2)
    throw std::invalid_argument("simcse_loss: the as-written denominator needs N >= 2");
  check_finite(h, "simcse_loss");
  check_finite(h_pos, "simcse_loss");

  const Matrix a = normalize(h, "simcse_loss");
  const Matrix b = normalize(h_pos, "simcse_loss");
  Matrix da(n, h.cols);
  Matrix db(n, h.cols);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  std::vector<double> logits(n);

  for (std::size_t i = 0; i < n; ++i) {
    if (variant == SimcseVariant::standard) {
      for (std::size_t j = 0; j < n; ++j) logits[j] = dot(a.row(i), b.row(j)) / tau;
      const double lse = log_sum_exp(logits);
      total += lse - logits[i];
      for (std::size_t j = 0; j < n; ++j) {
        const double g = (std::exp(logits[j] - lse) - (i == j ? 1.0 : 0.0)) * inv_n / tau;
        for (std::size_t k = 0; k < h.cols; ++k) {
          da(i, k) += g * b(j, k);
          db(j, k) += g * a(i, k);
        }
      }
    } else {
      const double pos = dot(a.row(i), b.row(i)) / tau;
      std::vector<double> neg;
      neg.reserve(n - 1);
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) neg.push_back(dot(a.row(i), a.row(j)) / tau);
      const double lse = log_sum_exp(neg);
      total += lse - pos;
      const double gp = -inv_n / tau;
      for (std::size_t k = 0; k < h.cols; ++k) {
        da(i, k) += gp * b(i, k);
        db(i, k) += gp * a(i, k);
      }
      std::size_t c = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double g = std::exp(neg[c++] - lse) * inv_n / tau;
        for (std::size_t k = 0; k < h.cols; ++k) {
          da(i, k) += g * a(j, k);
          da(j, k) += g * a(i, k);
        }
      }
    }
  }
  return {total * inv_n, normalize_backward(h, da), normalize_backward(h_pos, db)};
}

double clamp_log_inv_tau(double log_inv_tau) {
  return std::clamp(log_inv_tau, std::log(1.0 / kMaxTau), std::log(1.0 / kMinTau));
}

ClipLoss clip_infonce(const Matrix& u, const Matrix& v, double log_inv_tau) {
  if (u.rows != v.rows || u.cols != v.cols) throw std::invalid_argument("clip_infonce: u and v must have equal shape");
  const std::size_t n = u.rows;
  if (n == 0) throw std::invalid_argument("clip_infonce: empty batch");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(std::sqrt(dot(u.row(i), u.row(i))) - 1.0) > 1e-9 ||
        std::abs(std::sqrt(dot(v.row(i), v.row(i))) - 1.0) > 1e-9)
      throw std::invalid_argument("clip_infonce: rows must be L2-normalised");
  }
  if (!std::isfinite(log_inv_tau)) throw std::invalid_argument("clip_infonce: non-finite temperature");
  const double scale = std::exp(log_inv_tau);

  Matrix logits(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) logits(i, k) = scale * dot(u.row(i), v.row(k));

  // dL/dlogits, accumulated from the row (image->text) and column
  // (text->image) softmaxes.
  Matrix g(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  std::vector<double> buf(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) buf[k] = logits(i, k);
    const double lse = log_sum_exp(buf);
    total += lse - logits(i, i);
    for (std::size_t k = 0; k < n; ++k) g(i, k) += (std::exp(buf[k] - lse) - (i == k ? 1.0 : 0.0)) * inv_n;
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) buf[i] = logits(i, k);
    const double lse = log_sum_exp(buf);
    total += lse - logits(k, k);
    for (std::size_t i = 0; i < n; ++i) g(i, k) += (std::exp(buf[i] - lse) - (i == k ? 1.0 : 0.0)) * inv_n;
  }

  ClipLoss out{total * inv_n, Matrix(n, u.cols), Matrix(n, u.cols), 0.0};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double gik = g(i, k);
      out.grad_log_inv_tau += gik * logits(i, k);
      for (std::size_t d = 0; d < u.cols; ++d) {
        out.grad_u(i, d) += scale * gik * v(k, d);
        out.grad_v(k, d) += scale * gik * u(i, d);
      }
    }
  return out;
}

VectorLoss cox_partial_loglik(std::span<const double> eta, std::span<const double> time, std::span<const int> event,
                              Reduction reduction) {
  const std::size_t n = eta.size();
  if (time.size() != n || event.size() != n) throw std::invalid_argument("cox_partial_loglik: length mismatch");
  std::size_t events = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(eta[i]) || !std::isfinite(time[i])) throw std::invalid_argument("cox_partial_loglik: non-finite input");
    if (event[i] != 0 && event[i] != 1) throw std::invalid_argument("cox_partial_loglik: event flags must be 0/1");
    events += static_cast<std::size_t>(event[i]);
  }
  if (events == 0) throw std::invalid_argument("cox_partial_loglik: no events");

  const double shift = *std::max_element(eta.begin(), eta.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });

  // Descending sweep: risk-set sums including every subject tied at t.
  std::vector<double> risk_sum(n);
  double running = 0.0;
  for (std::size_t p = 0; p < n;) {
    std::size_t q = p;
    while (q < n && time[order[q]] == time[order[p]]) running += std::exp(eta[order[q++]] - shift);
    for (std::size_t r = p; r < q; ++r) risk_sum[order[r]] = running;
    p = q;
  }

  VectorLoss out{0.0, std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    if (event[i] == 1) out.value -= eta[i] - (std::log(risk_sum[i]) + shift);

  // Ascending sweep: A(t) = sum over events with t_i <= t of 1 / S(t_i).
  double acc = 0.0;
  for (std::size_t p = n; p > 0;) {
    std::size_t q = p;
    while (q > 0 && time[order[q - 1]] == time[order[p - 1]]) {
      const std::size_t i = order[q - 1];
      if (event[i] == 1) acc += 1.0 / risk_sum[i];
      --q;
    }
    for (std::size_t r = q; r < p; ++r) {
      const std::size_t k = order[r];
      out.grad[k] = std::exp(eta[k] - shift) * acc - static_cast<double>(event[k]);
    }
    p = q;
  }

  if (reduction == Reduction::mean) {
    const double inv = 1.0 / static_cast<double>(events);
    out.value *= inv;
    for (auto& g : out.grad) g *= inv;
  }
  return out;
}

}  // namespace oncoclip::loss
