#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oncoclip/checkpoint.hpp"
#include "oncoclip/encoders.hpp"
#include "oncoclip/error.hpp"
#include "oncoclip/linalg.hpp"
#include "oncoclip/random.hpp"

namespace oncoclip::train {

struct OptimizerConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 5e-3;  // decoupled
  double eps = 1e-8;
  void validate() const;
};

enum class Schedule { cosine, linear };

struct ScheduleConfig {
  Schedule schedule = Schedule::cosine;
  double warmup_ratio = 0.1;
  std::size_t total_steps = 0;
  void validate() const;
  std::size_t warmup_steps() const;
};

std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

// Linear ramp 0 -> base over the warmup steps, then cosine (or linear) decay
// to 0 at total_steps.
double lr_at(std::size_t step, const ScheduleConfig& cfg, double base_lr);

// Raised for non-finite gradients or losses; carries the optimizer step.
class TrainingError : public ConvergenceError {
 public:
  TrainingError(const std::string& what, std::size_t step);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

// One AdamW update at learning rate `lr`: p <- p (1 - lr wd), then the
// bias-corrected Adam step. Moments are allocated on first use.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                const OptimizerConfig& cfg, double lr);
inline void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                       const OptimizerConfig& cfg) {
  adamw_step(params, grads, state, cfg, cfg.lr);
}

double global_norm(const std::vector<std::span<const double>>& grads);

// Rescales every buffer by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping.
double clip_grad_norm(const std::vector<std::span<double>>& grads, double max_norm = 0.2);

// Element-wise mean of per-phase logit vectors.
std::vector<double> fuse_logits(const std::vector<std::vector<double>>& per_phase);

enum class Phase { N = 0, A = 1, V = 2, D = 3 };
char phase_tag(Phase p);
Phase phase_from_tag(char c);

// Per-patient phase inputs. At least one contrast-enhanced phase (A or V) is
// required.
class PhaseSet {
 public:
  void set(Phase p, std::vector<double> input);
  bool has(Phase p) const { return available_[static_cast<std::size_t>(p)]; }
  const std::vector<double>& get(Phase p) const;
  std::size_t count() const;
  std::vector<Phase> phases() const;
  // Throws DataError when empty, lacking A/V, or holding unequal sizes.
  void validate() const;
  // Uniform over the available phases.
  Phase sample(Rng& rng) const;
  // A, then V, then the first available phase; used for deterministic evaluation.
  Phase preferred() const;

 private:
  std::array<std::vector<double>, 4> inputs_{};
  std::array<bool, 4> available_{};
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double metric = 0.0;
  double temperature = std::numeric_limits<double>::quiet_NaN();
  nlohmann::json to_json() const;
};

void write_log(const std::string& path, const std::vector<EpochRecord>& log);

// ---------------------------------------------------------------------------
// Stage 1: image encoder + 14 attribute heads.

struct Stage1Data {
  Matrix inputs;  // one row per sample
  std::vector<std::array<int, 14>> labels;  // loss::kMissingLabel for missing
  void validate(std::size_t input_size) const;
};

struct Stage1Config {
  OptimizerConfig opt{5e-4, 0.9, 0.999, 5e-3, 1e-8};
  Schedule schedule = Schedule::cosine;
  double warmup_ratio = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 300;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
  static Stage1Config from_json(const nlohmann::json& j);
};

struct Stage1Result {
  nn::ImageEncoder encoder;
  nn::MultiTaskHeads heads;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;  // 0 = initialisation
  std::vector<EpochRecord> log;
};

Matrix encode(const nn::ImageEncoder& enc, const Matrix& inputs);

// Per head: mean one-vs-rest AUC over the classes that have one on `data`;
// then the unweighted mean over heads that have any.
double stage1_macro_auc(const nn::ImageEncoder& enc, const nn::MultiTaskHeads& heads, const Stage1Data& data);

Stage1Result train_stage1(const Stage1Data& train, const Stage1Data& val, nn::ImageEncoder encoder,
                          nn::MultiTaskHeads heads, const Stage1Config& cfg);

// ---------------------------------------------------------------------------
// Stage 2: contrastive image-text alignment against frozen text embeddings.

struct PairedSample {
  PhaseSet phases;
  std::vector<std::vector<double>> text;  // original report first, then shuffled versions
};

struct Stage2Config {
  double backbone_lr = 1e-5;
  double projection_lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 1e-2;
  double eps = 1e-8;
  Schedule schedule = Schedule::cosine;
  double warmup_ratio = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 1024;
  double clip_norm = 0.2;
  double init_temperature = 0.07;
  bool train_backbone = true;
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
  static Stage2Config from_json(const nlohmann::json& j);
};

struct Stage2Result {
  nn::ImageEncoder encoder;
  nn::ProjectionHead projection;
  double log_inv_tau = 0.0;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> log;  // entry 0 holds the loss and metric at initialisation
};

// Unit-norm image embeddings (rows) from the given phase inputs.
Matrix embed_images(const nn::ImageEncoder& enc, const nn::ProjectionHead& proj, const Matrix& inputs);

// Mean of image->text and text->image Recall@1 using each patient's preferred
// phase and original report.
double stage2_retrieval_metric(const nn::ImageEncoder& enc, const nn::ProjectionHead& proj,
                               const std::vector<PairedSample>& data);

Stage2Result train_stage2(const std::vector<PairedSample>& train, const std::vector<PairedSample>& val,
                          nn::ImageEncoder encoder, nn::ProjectionHead projection, const Stage2Config& cfg);

// ---------------------------------------------------------------------------
// Fine-tuning heads with a learning-rate x batch-size grid search.

enum class Task { classification, cox };

struct FinetuneData {
  Matrix inputs;
  std::vector<int> labels;  // classification
  std::vector<double> time;  // cox
  std::vector<int> event;    // cox
};

struct FinetuneConfig {
  Task task = Task::classification;
  std::size_t classes = 2;
  std::vector<std::size_t> batch_sizes{50, 100, 150};
  std::vector<double> lrs{5e-4, 1e-4, 5e-5, 1e-5};
  std::size_t epochs = 100;
  bool train_backbone = false;
  std::vector<std::size_t> head_hidden;  // empty: linear head
  double weight_decay = 1e-2;
  Schedule schedule = Schedule::cosine;
  double warmup_ratio = 0.1;
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json& j);
};

struct GridPoint {
  std::size_t batch_size = 0;
  double lr = 0.0;
  double metric = 0.0;
};

struct FinetuneResult {
  nn::ImageEncoder encoder;
  nn::Mlp head;
  std::size_t batch_size = 0;
  double lr = 0.0;
  double metric = 0.0;
  std::vector<GridPoint> grid;
};

// Head outputs (N x classes, or N x 1 log-risk for cox).
Matrix score_head(const nn::ImageEncoder& enc, const nn::Mlp& head, const Matrix& inputs);

// Validation metric: macro one-vs-rest AUC of softmax probabilities, or
// Harrell's C of the predicted log-risk.
double finetune_metric(const nn::ImageEncoder& enc, const nn::Mlp& head, const FinetuneData& data, Task task);

FinetuneResult finetune_head(const nn::ImageEncoder& encoder, const FinetuneData& train, const FinetuneData& val,
                             const FinetuneConfig& cfg);

// ---------------------------------------------------------------------------
// Multi-phase late fusion.

struct FusionSetting {
  std::vector<char> phases;
  std::size_t patients = 0;  // patients with at least one phase of the setting
  double auc = 0.0;
};

struct FusionReport {
  std::vector<FusionSetting> settings;
  bool permutation_invariant = true;
};

// Binary head: the positive-class probability of fused logits. Settings use
// the first 1..4 phases of the order A, V, N, D.
FusionReport fusion_ablation(const nn::ImageEncoder& enc, const nn::Mlp& head, const std::vector<PhaseSet>& patients,
                             std::span<const int> labels);

// ---------------------------------------------------------------------------
// Checkpoint helpers.

void put_mlp(Checkpoint& ckpt, const std::string& name, const nn::Mlp& m);
nn::Mlp get_mlp(const Checkpoint& ckpt, const std::string& name);

}  // namespace oncoclip::train
