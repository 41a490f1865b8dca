#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "oncoclip/linalg.hpp"

namespace oncoclip::loss {

enum class Reduction { sum, mean };

// Loss value plus the gradient with respect to the logits.
struct LogitLoss {
  double value = 0.0;
  Matrix grad;
};

// Label value for a missing attribute; such rows are masked out.
inline constexpr int kMissingLabel = -1;

// Categorical cross-entropy of softmax(logits) against integer labels.
// `sum` is -sum_i log p_i[y_i]; `mean` divides by the number of labelled rows.
LogitLoss multitask_ce(const Matrix& logits, std::span<const int> labels, Reduction reduction = Reduction::mean);

// Masked-token prediction batch: `probs` holds samples * masked_per_sample
// rows of vocabulary probabilities, `targets` the true token per row.
struct MlmBatch {
  std::size_t samples = 0;
  std::size_t masked_per_sample = 0;
  Matrix probs;
  std::vector<std::uint32_t> targets;
};

struct MlmValue {
  double value = 0.0;
  bool degenerate = false;  // some true token had probability 0; value is +inf
};

// -(1 / (N * M)) * sum over masked tokens of log p[true token].
MlmValue mlm_loss(const MlmBatch& batch);
// Same objective evaluated from logits (probabilities via softmax).
LogitLoss mlm_loss_from_logits(const Matrix& logits, std::span<const std::uint32_t> targets, std::size_t samples,
                               std::size_t masked_per_sample);

double cosine_sim(std::span<const double> a, std::span<const double> b);

enum class SimcseVariant {
  // Numerator exp(sim(h_i, h_i+)/tau) over sum_{j != i} exp(sim(h_i, h_j)/tau).
  as_written,
  // Conventional in-batch form: denominator sum_j exp(sim(h_i, h_j+)/tau).
  standard,
};

struct PairLoss {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

// h and h_pos are (N x D) raw (unnormalised) embeddings from two dropout draws.
PairLoss simcse_loss(const Matrix& h, const Matrix& h_pos, double tau, SimcseVariant variant = SimcseVariant::standard);

struct ClipLoss {
  double value = 0.0;
  Matrix grad_u;
  Matrix grad_v;
  double grad_log_inv_tau = 0.0;
};

inline constexpr double kMinTau = 0.01;
inline constexpr double kMaxTau = 100.0;
double clamp_log_inv_tau(double log_inv_tau);

// Symmetric InfoNCE over L2-normalised image rows u and text rows v; the
// temperature is carried as log(1/tau). Rows must be unit norm within 1e-9.
ClipLoss clip_infonce(const Matrix& u, const Matrix& v, double log_inv_tau);

struct VectorLoss {
  double value = 0.0;
  std::vector<double> grad;
};

// Negative Breslow partial log-likelihood of linear predictors `eta`:
// -sum_{i: event} [eta_i - log sum_{j: t_j >= t_i} exp(eta_j)]. `mean`
// divides by the number of events.
VectorLoss cox_partial_loglik(std::span<const double> eta, std::span<const double> time, std::span<const int> event,
                              Reduction reduction = Reduction::sum);

}  // namespace oncoclip::loss
