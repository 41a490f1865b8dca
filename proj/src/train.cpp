#include "oncoclip/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "oncoclip/clfmetrics.hpp"
#include "oncoclip/kernels.hpp"
#include "oncoclip/losses.hpp"
#include "oncoclip/retrieval.hpp"
#include "oncoclip/survival.hpp"

namespace oncoclip::train {

namespace {

constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kPhaseStream = 12;
constexpr std::uint64_t kInitStream = 13;

void check_finite_grads(std::span<const double> g, std::size_t step, const char* who) {
  for (double v : g)
    if (!std::isfinite(v)) throw TrainingError(std::string(who) + ": non-finite gradient at step " + std::to_string(step), step);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kShuffleStream, epoch));
  rng.shuffle(order.begin(), order.end());
  return order;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy(m.row(idx[k]).begin(), m.row(idx[k]).end(), out.row(k).begin());
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto s = nn::softmax(logits.row(i));
    std::copy(s.begin(), s.end(), p.row(i).begin());
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("optimizer: eps must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
}

void ScheduleConfig::validate() const {
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw std::invalid_argument("schedule: warmup_ratio must lie in [0, 1)");
}

std::size_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total_steps)));
}

std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "linear"; }

Schedule schedule_from_string(const std::string& s) {
  if (s == "cosine") return Schedule::cosine;
  if (s == "linear") return Schedule::linear;
  throw std::invalid_argument("unknown schedule '" + s + "' (expected cosine or linear)");
}

double lr_at(std::size_t step, const ScheduleConfig& cfg, double base_lr) {
  cfg.validate();
  if (step > cfg.total_steps) throw std::invalid_argument("lr_at: step beyond total_steps");
  const std::size_t warm = cfg.warmup_steps();
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  const std::size_t decay = cfg.total_steps - warm;
  if (decay == 0) return base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(decay);
  if (cfg.schedule == Schedule::cosine) return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base_lr * (1.0 - progress);
}

TrainingError::TrainingError(const std::string& what, std::size_t step) : ConvergenceError(what), step_(step) {}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state, const OptimizerConfig& cfg,
                double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: parameter/gradient size mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: moment buffers do not match parameters");
  check_finite_grads(grads, state.step, "adamw_step");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] = params[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

double global_norm(const std::vector<std::span<const double>>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g) s += v * v;
  return std::sqrt(s);
}

double clip_grad_norm(const std::vector<std::span<double>>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  std::vector<std::span<const double>> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (!std::isfinite(norm)) throw std::invalid_argument("clip_grad_norm: non-finite gradient");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads)
      for (double& v : g) v *= scale;
  }
  return norm;
}

std::vector<double> fuse_logits(const std::vector<std::vector<double>>& per_phase) {
  if (per_phase.empty()) throw std::invalid_argument("fuse_logits: no phases");
  const std::size_t d = per_phase.front().size();
  std::vector<double> out(d, 0.0);
  for (const auto& v : per_phase) {
    if (v.size() != d) throw std::invalid_argument("fuse_logits: phases have different logit sizes");
    for (std::size_t k = 0; k < d; ++k) out[k] += v[k];
  }
  for (auto& v : out) v /= static_cast<double>(per_phase.size());
  return out;
}

char phase_tag(Phase p) { return "NAVD"[static_cast<std::size_t>(p)]; }

Phase phase_from_tag(char c) {
  switch (c) {
    case 'N': return Phase::N;
    case 'A': return Phase::A;
    case 'V': return Phase::V;
    case 'D': return Phase::D;
    default: throw std::invalid_argument(std::string("unknown phase tag '") + c + "'");
  }
}

void PhaseSet::set(Phase p, std::vector<double> input) {
  inputs_[static_cast<std::size_t>(p)] = std::move(input);
  available_[static_cast<std::size_t>(p)] = true;
}

const std::vector<double>& PhaseSet::get(Phase p) const {
  if (!has(p)) throw DataError(std::string("phase ") + phase_tag(p) + " is not available");
  return inputs_[static_cast<std::size_t>(p)];
}

std::size_t PhaseSet::count() const { return static_cast<std::size_t>(std::count(available_.begin(), available_.end(), true)); }

std::vector<Phase> PhaseSet::phases() const {
  std::vector<Phase> out;
  for (std::size_t k = 0; k < 4; ++k)
    if (available_[k]) out.push_back(static_cast<Phase>(k));
  return out;
}

void PhaseSet::validate() const {
  if (count() == 0) throw DataError("patient has no phases");
  if (!has(Phase::A) && !has(Phase::V)) throw DataError("patient has no contrast-enhanced (A or V) phase");
  std::size_t size = 0;
  for (auto p : phases()) {
    const auto n = inputs_[static_cast<std::size_t>(p)].size();
    if (n == 0) throw DataError("empty phase input");
    if (size == 0) size = n;
    if (n != size) throw DataError("phase inputs differ in size");
  }
}

Phase PhaseSet::sample(Rng& rng) const {
  const auto ps = phases();
  if (ps.empty()) throw DataError("patient has no phases");
  return ps[rng.below(ps.size())];
}

Phase PhaseSet::preferred() const {
  if (has(Phase::A)) return Phase::A;
  if (has(Phase::V)) return Phase::V;
  const auto ps = phases();
  if (ps.empty()) throw DataError("patient has no phases");
  return ps.front();
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch}, {"loss", loss}, {"lr", lr}, {"metric", metric}};
  if (!std::isnan(temperature)) j["temperature"] = temperature;
  return j;
}

void write_log(const std::string& path, const std::vector<EpochRecord>& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log " + path);
  for (const auto& r : log) out << r.to_json().dump() << '\n';
}

// ---------------------------------------------------------------------------

void Stage1Data::validate(std::size_t input_size) const {
  if (inputs.rows == 0) throw std::invalid_argument("stage 1: empty dataset");
  if (inputs.cols != input_size) throw std::invalid_argument("stage 1: input width does not match the encoder");
  if (labels.size() != inputs.rows) throw std::invalid_argument("stage 1: label rows do not match inputs");
  for (const auto& row : labels)
    for (std::size_t k = 0; k < 14; ++k)
      if (row[k] != loss::kMissingLabel && (row[k] < 0 || static_cast<std::size_t>(row[k]) >= nn::kAttributeClasses[k]))
        throw std::invalid_argument("stage 1: attribute label out of range");
}

nlohmann::json Stage1Config::to_json() const {
  return {{"learning_rate", opt.lr},         {"betas", {opt.beta1, opt.beta2}}, {"weight_decay", opt.weight_decay},
          {"eps", opt.eps},                  {"lr_schedule", to_string(schedule)}, {"warmup_ratio", warmup_ratio},
          {"epochs", epochs},                {"batch_size", batch_size},      {"gradient_clip_max_norm", clip_norm},
          {"seed", seed}};
}

Stage1Config Stage1Config::from_json(const nlohmann::json& j) {
  Stage1Config c;
  c.opt.lr = j.value("learning_rate", c.opt.lr);
  if (j.contains("betas")) {
    c.opt.beta1 = j.at("betas").at(0).get<double>();
    c.opt.beta2 = j.at("betas").at(1).get<double>();
  }
  c.opt.weight_decay = j.value("weight_decay", c.opt.weight_decay);
  c.opt.eps = j.value("eps", c.opt.eps);
  c.schedule = schedule_from_string(j.value("lr_schedule", to_string(c.schedule)));
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.clip_norm = j.value("gradient_clip_max_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.opt.validate();
  return c;
}

Matrix encode(const nn::ImageEncoder& enc, const Matrix& inputs) { return enc.backbone.forward(inputs); }

double stage1_macro_auc(const nn::ImageEncoder& enc, const nn::MultiTaskHeads& heads, const Stage1Data& data) {
  const Matrix feats = encode(enc, data.inputs);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    std::vector<std::size_t> rows;
    std::vector<int> y;
    for (std::size_t i = 0; i < data.labels.size(); ++i)
      if (data.labels[i][h] != loss::kMissingLabel) rows.push_back(i), y.push_back(data.labels[i][h]);
    if (rows.empty()) continue;
    const Matrix probs = softmax_rows(heads.heads[h].forward(gather_rows(feats, rows)));
    double hsum = 0.0;
    std::size_t hn = 0;
    for (const auto& a : metrics::ovr_aucs(probs, y))
      if (a) hsum += *a, ++hn;
    if (hn == 0) continue;
    sum += hsum / static_cast<double>(hn);
    ++used;
  }
  if (used == 0) throw UndefinedMetric("stage 1: no attribute head has a defined validation AUC");
  return sum / static_cast<double>(used);
}

Stage1Result train_stage1(const Stage1Data& train, const Stage1Data& val, nn::ImageEncoder encoder,
                          nn::MultiTaskHeads heads, const Stage1Config& cfg) {
  train.validate(encoder.input_size());
  val.validate(encoder.input_size());
  cfg.opt.validate();
  if (cfg.batch_size == 0) throw std::invalid_argument("stage 1: batch_size must be >= 1");
  if (heads.size() != 14) throw std::invalid_argument("stage 1: expected 14 attribute heads");

  const std::size_t n = train.inputs.rows;
  const std::size_t per_epoch = batches_per_epoch(n, cfg.batch_size);
  ScheduleConfig sched{cfg.schedule, cfg.warmup_ratio, per_epoch * cfg.epochs};
  sched.validate();

  Stage1Result best{encoder, heads, stage1_macro_auc(encoder, heads, val), 0, {}};
  best.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), 0.0, best.best_metric});

  AdamState bb_state;
  std::vector<AdamState> head_states(heads.size());
  std::vector<double> bb_grad(encoder.backbone.param_count());
  std::vector<std::vector<double>> head_grads(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) head_grads[h].resize(heads.heads[h].param_count());

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const Matrix x = gather_rows(train.inputs, idx);

      nn::MlpCache bb_cache;
      const Matrix feats = encoder.backbone.forward(x, &bb_cache);
      Matrix dfeat(feats.rows, feats.cols);
      std::fill(bb_grad.begin(), bb_grad.end(), 0.0);
      double batch_loss = 0.0;
      std::vector<int> y(idx.size());
      for (std::size_t h = 0; h < heads.size(); ++h) {
        for (std::size_t k = 0; k < idx.size(); ++k) y[k] = train.labels[idx[k]][h];
        nn::MlpCache hc;
        const Matrix logits = heads.heads[h].forward(feats, &hc);
        const auto ce = loss::multitask_ce(logits, y, loss::Reduction::mean);
        batch_loss += ce.value;
        std::fill(head_grads[h].begin(), head_grads[h].end(), 0.0);
        const Matrix d = heads.heads[h].backward(hc, ce.grad, head_grads[h]);
        for (std::size_t k = 0; k < d.data.size(); ++k) dfeat.data[k] += d.data[k];
      }
      encoder.backbone.backward(bb_cache, dfeat, bb_grad);
      if (!std::isfinite(batch_loss)) throw TrainingError("stage 1: non-finite loss at step " + std::to_string(step), step);

      if (cfg.clip_norm > 0.0) {
        std::vector<std::span<double>> all{bb_grad};
        for (auto& g : head_grads) all.emplace_back(g);
        clip_grad_norm(all, cfg.clip_norm);
      }
      lr = lr_at(step, sched, cfg.opt.lr);
      adamw_step(encoder.backbone.params(), bb_grad, bb_state, cfg.opt, lr);
      for (std::size_t h = 0; h < heads.size(); ++h) adamw_step(heads.heads[h].params(), head_grads[h], head_states[h], cfg.opt, lr);
      ++step;
      loss_sum += batch_loss;
    }
    const double metric = stage1_macro_auc(encoder, heads, val);
    best.log.push_back({epoch, loss_sum / static_cast<double>(per_epoch), lr, metric});
    // Equal metrics keep the earlier epoch.
    if (metric > best.best_metric) {
      best.encoder = encoder;
      best.heads = heads;
      best.best_metric = metric;
      best.best_epoch = epoch;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

nlohmann::json Stage2Config::to_json() const {
  return {{"backbone_learning_rate", backbone_lr},
          {"projection_learning_rate", projection_lr},
          {"betas", {beta1, beta2}},
          {"weight_decay", weight_decay},
          {"eps", eps},
          {"lr_schedule", to_string(schedule)},
          {"warmup_ratio", warmup_ratio},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"gradient_clip_max_norm", clip_norm},
          {"temperature_init", init_temperature},
          {"learnable_temperature", true},
          {"train_backbone", train_backbone},
          {"seed", seed}};
}

Stage2Config Stage2Config::from_json(const nlohmann::json& j) {
  Stage2Config c;
  c.backbone_lr = j.value("backbone_learning_rate", c.backbone_lr);
  c.projection_lr = j.value("projection_learning_rate", c.projection_lr);
  if (j.contains("betas")) {
    c.beta1 = j.at("betas").at(0).get<double>();
    c.beta2 = j.at("betas").at(1).get<double>();
  }
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.eps = j.value("eps", c.eps);
  c.schedule = schedule_from_string(j.value("lr_schedule", to_string(c.schedule)));
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.clip_norm = j.value("gradient_clip_max_norm", c.clip_norm);
  c.init_temperature = j.value("temperature_init", c.init_temperature);
  c.train_backbone = j.value("train_backbone", c.train_backbone);
  c.seed = j.value("seed", c.seed);
  return c;
}

Matrix embed_images(const nn::ImageEncoder& enc, const nn::ProjectionHead& proj, const Matrix& inputs) {
  return nn::l2_normalize_rows(proj.net.forward(enc.backbone.forward(inputs)));
}

namespace {

void validate_pairs(const std::vector<PairedSample>& data, const nn::ImageEncoder& enc, std::size_t embed_dim,
                    const char* which) {
  if (data.empty()) throw std::invalid_argument(std::string("stage 2: empty ") + which + " set");
  for (const auto& s : data) {
    s.phases.validate();
    if (s.phases.get(s.phases.phases().front()).size() != enc.input_size())
      throw DataError("stage 2: phase input width does not match the encoder");
    if (s.text.empty()) throw DataError("stage 2: sample without text embeddings");
    for (const auto& t : s.text)
      if (t.size() != embed_dim) throw DataError("stage 2: text embedding width does not match the projection");
  }
}

Matrix preferred_inputs(const std::vector<PairedSample>& data) {
  const std::size_t d = data.front().phases.get(data.front().phases.preferred()).size();
  Matrix x(data.size(), d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& v = data[i].phases.get(data[i].phases.preferred());
    std::copy(v.begin(), v.end(), x.row(i).begin());
  }
  return x;
}

Matrix original_texts(const std::vector<PairedSample>& data) {
  Matrix t(data.size(), data.front().text.front().size());
  for (std::size_t i = 0; i < data.size(); ++i) std::copy(data[i].text[0].begin(), data[i].text[0].end(), t.row(i).begin());
  return nn::l2_normalize_rows(t);
}

}  // namespace

double stage2_retrieval_metric(const nn::ImageEncoder& enc, const nn::ProjectionHead& proj,
                               const std::vector<PairedSample>& data) {
  const Matrix u = embed_images(enc, proj, preferred_inputs(data));
  const Matrix v = original_texts(data);
  const Matrix s = retrieval::similarity_matrix(u, v);
  return 0.5 * (retrieval::recall_at_k(s, 1, retrieval::Direction::i2t) +
                retrieval::recall_at_k(s, 1, retrieval::Direction::t2i));
}

Stage2Result train_stage2(const std::vector<PairedSample>& train, const std::vector<PairedSample>& val,
                          nn::ImageEncoder encoder, nn::ProjectionHead projection, const Stage2Config& cfg) {
  const std::size_t embed_dim = projection.embed_dim();
  if (projection.net.input_dim() != encoder.feature_dim())
    throw std::invalid_argument("stage 2: projection input does not match encoder features");
  validate_pairs(train, encoder, embed_dim, "training");
  validate_pairs(val, encoder, embed_dim, "validation");
  if (cfg.batch_size < 2) throw std::invalid_argument("stage 2: batch_size must be >= 2");
  if (!(cfg.init_temperature > 0.0)) throw std::invalid_argument("stage 2: temperature must be > 0");

  OptimizerConfig bb_opt{cfg.backbone_lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps};
  OptimizerConfig pj_opt{cfg.projection_lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps};
  OptimizerConfig tau_opt{cfg.projection_lr, cfg.beta1, cfg.beta2, 0.0, cfg.eps};
  bb_opt.validate();
  pj_opt.validate();

  const std::size_t n = train.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  // A trailing batch of one has no negatives; it is dropped.
  std::size_t per_epoch = n / bs + (n % bs >= 2 ? 1 : 0);
  if (per_epoch == 0) throw std::invalid_argument("stage 2: need at least two training pairs");
  ScheduleConfig sched{cfg.schedule, cfg.warmup_ratio, per_epoch * cfg.epochs};
  sched.validate();

  double log_inv_tau = loss::clamp_log_inv_tau(std::log(1.0 / cfg.init_temperature));
  Stage2Result best{encoder, projection, log_inv_tau, stage2_retrieval_metric(encoder, projection, val), 0, {}};
  {
    const Matrix u = embed_images(encoder, projection, preferred_inputs(train));
    const double l0 = loss::clip_infonce(u, original_texts(train), log_inv_tau).value;
    best.log.push_back({0, l0, 0.0, best.best_metric, std::exp(-log_inv_tau)});
  }

  AdamState bb_state, pj_state, tau_state;
  std::vector<double> bb_grad(encoder.backbone.param_count()), pj_grad(projection.net.param_count());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * bs, hi = std::min(n, lo + bs);
      const std::size_t m = hi - lo;
      Matrix x(m, encoder.input_size()), t(m, embed_dim);
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = order[lo + k];
        Rng rng(derive_seed(cfg.seed, kPhaseStream, step * cfg.batch_size + k));
        const auto& img = train[i].phases.get(train[i].phases.sample(rng));
        std::copy(img.begin(), img.end(), x.row(k).begin());
        const auto& txt = train[i].text[rng.below(train[i].text.size())];
        std::copy(txt.begin(), txt.end(), t.row(k).begin());
      }
      const Matrix v = nn::l2_normalize_rows(t);

      nn::MlpCache bb_cache, pj_cache;
      const Matrix feats = encoder.backbone.forward(x, &bb_cache);
      const Matrix raw = projection.net.forward(feats, &pj_cache);
      std::vector<double> norms;
      const Matrix u = nn::l2_normalize_rows(raw, &norms);
      const auto cl = loss::clip_infonce(u, v, log_inv_tau);
      if (!std::isfinite(cl.value)) throw TrainingError("stage 2: non-finite loss at step " + std::to_string(step), step);

      std::fill(bb_grad.begin(), bb_grad.end(), 0.0);
      std::fill(pj_grad.begin(), pj_grad.end(), 0.0);
      const Matrix draw = nn::l2_normalize_rows_backward(u, norms, cl.grad_u);
      const Matrix dfeat = projection.net.backward(pj_cache, draw, pj_grad);
      if (cfg.train_backbone) encoder.backbone.backward(bb_cache, dfeat, bb_grad);
      std::vector<double> tau_grad{cl.grad_log_inv_tau};

      if (cfg.clip_norm > 0.0) clip_grad_norm({bb_grad, pj_grad, tau_grad}, cfg.clip_norm);
      lr = lr_at(step, sched, cfg.projection_lr);
      if (cfg.train_backbone) adamw_step(encoder.backbone.params(), bb_grad, bb_state, bb_opt, lr_at(step, sched, cfg.backbone_lr));
      adamw_step(projection.net.params(), pj_grad, pj_state, pj_opt, lr);
      std::span<double> tau_param(&log_inv_tau, 1);
      adamw_step(tau_param, tau_grad, tau_state, tau_opt, lr);
      log_inv_tau = loss::clamp_log_inv_tau(log_inv_tau);
      ++step;
      loss_sum += cl.value;
    }
    const double metric = stage2_retrieval_metric(encoder, projection, val);
    best.log.push_back({epoch, loss_sum / static_cast<double>(per_epoch), lr, metric, std::exp(-log_inv_tau)});
    if (metric > best.best_metric) {
      best.encoder = encoder;
      best.projection = projection;
      best.log_inv_tau = log_inv_tau;
      best.best_metric = metric;
      best.best_epoch = epoch;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

nlohmann::json FinetuneConfig::to_json() const {
  return {{"task", task == Task::classification ? "classification" : "cox"},
          {"classes", classes},
          {"batch_size_grid", batch_sizes},
          {"learning_rate_grid", lrs},
          {"epochs", epochs},
          {"train_backbone", train_backbone},
          {"head_hidden", head_hidden},
          {"weight_decay", weight_decay},
          {"lr_schedule", to_string(schedule)},
          {"warmup_ratio", warmup_ratio},
          {"seed", seed}};
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
  FinetuneConfig c;
  const std::string task = j.value("task", std::string("classification"));
  if (task == "classification")
    c.task = Task::classification;
  else if (task == "cox")
    c.task = Task::cox;
  else
    throw std::invalid_argument("unknown fine-tuning task '" + task + "'");
  c.classes = j.value("classes", c.classes);
  c.batch_sizes = j.value("batch_size_grid", c.batch_sizes);
  c.lrs = j.value("learning_rate_grid", c.lrs);
  c.epochs = j.value("epochs", c.epochs);
  c.train_backbone = j.value("train_backbone", c.train_backbone);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.schedule = schedule_from_string(j.value("lr_schedule", to_string(c.schedule)));
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.seed = j.value("seed", c.seed);
  return c;
}

Matrix score_head(const nn::ImageEncoder& enc, const nn::Mlp& head, const Matrix& inputs) {
  return head.forward(enc.backbone.forward(inputs));
}

double finetune_metric(const nn::ImageEncoder& enc, const nn::Mlp& head, const FinetuneData& data, Task task) {
  const Matrix out = score_head(enc, head, data.inputs);
  if (task == Task::classification) return metrics::macro_ovr_auc(softmax_rows(out), data.labels);
  return survival::harrell_cindex(data.time, data.event, out.data);
}

namespace {

void validate_finetune(const FinetuneData& d, const nn::ImageEncoder& enc, const FinetuneConfig& cfg, const char* which) {
  const std::string w(which);
  if (d.inputs.rows == 0) throw std::invalid_argument("finetune: empty " + w + " set");
  if (d.inputs.cols != enc.input_size()) throw std::invalid_argument("finetune: " + w + " input width does not match the encoder");
  if (cfg.task == Task::classification) {
    if (d.labels.size() != d.inputs.rows) throw std::invalid_argument("finetune: " + w + " labels do not match inputs");
    for (int y : d.labels)
      if (y < 0 || static_cast<std::size_t>(y) >= cfg.classes) throw std::invalid_argument("finetune: label out of range");
  } else {
    if (d.time.size() != d.inputs.rows || d.event.size() != d.inputs.rows)
      throw std::invalid_argument("finetune: " + w + " survival records do not match inputs");
  }
}

struct HeadRun {
  nn::ImageEncoder encoder;
  nn::Mlp head;
};

HeadRun fit_head(const nn::ImageEncoder& encoder, const FinetuneData& train, const FinetuneConfig& cfg,
                 std::size_t batch_size, double lr_base, std::uint64_t seed) {
  HeadRun run{encoder, nn::Mlp::stack(encoder.feature_dim(), cfg.head_hidden,
                                      cfg.task == Task::classification ? cfg.classes : 1, nn::Activation::tanh,
                                      nn::Activation::identity)};
  run.head.init_uniform(derive_seed(seed, kInitStream));
  const std::size_t n = train.inputs.rows;
  const std::size_t per_epoch = batches_per_epoch(n, batch_size);
  ScheduleConfig sched{cfg.schedule, cfg.warmup_ratio, per_epoch * cfg.epochs};
  const OptimizerConfig opt{lr_base, 0.9, 0.999, cfg.weight_decay, 1e-8};
  opt.validate();

  // A frozen backbone only needs its features once.
  const Matrix frozen = cfg.train_backbone ? Matrix() : encode(encoder, train.inputs);
  AdamState head_state, bb_state;
  std::vector<double> head_grad(run.head.param_count()), bb_grad(run.encoder.backbone.param_count());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, seed, epoch);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * batch_size, hi = std::min(n, lo + batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      nn::MlpCache bb_cache, head_cache;
      const Matrix feats = cfg.train_backbone ? run.encoder.backbone.forward(gather_rows(train.inputs, idx), &bb_cache)
                                              : gather_rows(frozen, idx);
      const Matrix out = run.head.forward(feats, &head_cache);
      Matrix dout;
      if (cfg.task == Task::classification) {
        std::vector<int> y;
        for (auto i : idx) y.push_back(train.labels[i]);
        dout = loss::multitask_ce(out, y, loss::Reduction::mean).grad;
      } else {
        std::vector<double> t;
        std::vector<int> e;
        for (auto i : idx) t.push_back(train.time[i]), e.push_back(train.event[i]);
        if (std::count(e.begin(), e.end(), 1) == 0) {
          // No events: the partial likelihood is constant in the batch.
          ++step;
          continue;
        }
        const auto cox = loss::cox_partial_loglik(out.data, t, e, loss::Reduction::mean);
        dout = Matrix(out.rows, 1);
        dout.data = cox.grad;
      }
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      const Matrix dfeat = run.head.backward(head_cache, dout, head_grad);
      const double lr = lr_at(step, sched, lr_base);
      adamw_step(run.head.params(), head_grad, head_state, opt, lr);
      if (cfg.train_backbone) {
        std::fill(bb_grad.begin(), bb_grad.end(), 0.0);
        run.encoder.backbone.backward(bb_cache, dfeat, bb_grad);
        adamw_step(run.encoder.backbone.params(), bb_grad, bb_state, opt, lr);
      }
      ++step;
    }
  }
  return run;
}

}  // namespace

FinetuneResult finetune_head(const nn::ImageEncoder& encoder, const FinetuneData& train, const FinetuneData& val,
                             const FinetuneConfig& cfg) {
  if (cfg.batch_sizes.empty() || cfg.lrs.empty()) throw std::invalid_argument("finetune: empty hyperparameter grid");
  for (auto b : cfg.batch_sizes)
    if (b == 0) throw std::invalid_argument("finetune: batch sizes must be >= 1");
  if (cfg.task == Task::classification && cfg.classes < 2) throw std::invalid_argument("finetune: need >= 2 classes");
  validate_finetune(train, encoder, cfg, "training");
  validate_finetune(val, encoder, cfg, "validation");

  FinetuneResult best;
  bool have = false;
  std::size_t point = 0;
  for (auto bs : cfg.batch_sizes) {
    for (double lr : cfg.lrs) {
      auto run = fit_head(encoder, train, cfg, bs, lr, derive_seed(cfg.seed, point++));
      // Selection errors (e.g. single-class validation labels) propagate.
      const double metric = finetune_metric(run.encoder, run.head, val, cfg.task);
      best.grid.push_back({bs, lr, metric});
      if (!have || metric > best.metric) {
        best.encoder = std::move(run.encoder);
        best.head = std::move(run.head);
        best.batch_size = bs;
        best.lr = lr;
        best.metric = metric;
        have = true;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

FusionReport fusion_ablation(const nn::ImageEncoder& enc, const nn::Mlp& head, const std::vector<PhaseSet>& patients,
                             std::span<const int> labels) {
  if (patients.size() != labels.size()) throw std::invalid_argument("fusion_ablation: labels do not match patients");
  if (head.output_dim() != 2) throw std::invalid_argument("fusion_ablation: expected a binary head");
  static constexpr std::array<Phase, 4> kOrder{Phase::A, Phase::V, Phase::N, Phase::D};
  FusionReport report;
  for (std::size_t k = 1; k <= 4; ++k) {
    FusionSetting setting;
    for (std::size_t j = 0; j < k; ++j) setting.phases.push_back(phase_tag(kOrder[j]));
    std::vector<double> scores;
    std::vector<int> y;
    for (std::size_t i = 0; i < patients.size(); ++i) {
      std::vector<std::vector<double>> logits;
      for (std::size_t j = 0; j < k; ++j)
        if (patients[i].has(kOrder[j])) {
          const auto f = nn::forward_image(enc, patients[i].get(kOrder[j]));
          Matrix fm(1, f.size());
          fm.data = f;
          logits.push_back(head.forward(fm).row_vector(0));
        }
      if (logits.empty()) continue;
      const auto fused = fuse_logits(logits);
      auto reversed = logits;
      std::reverse(reversed.begin(), reversed.end());
      const auto fused_rev = fuse_logits(reversed);
      for (std::size_t c = 0; c < fused.size(); ++c)
        if (std::abs(fused[c] - fused_rev[c]) > 1e-12 * std::max(1.0, std::abs(fused[c]))) report.permutation_invariant = false;
      scores.push_back(nn::softmax(fused)[1]);
      y.push_back(labels[i]);
    }
    setting.patients = scores.size();
    setting.auc = metrics::roc_auc(scores, y);
    report.settings.push_back(std::move(setting));
  }
  return report;
}

void put_mlp(Checkpoint& ckpt, const std::string& name, const nn::Mlp& m) {
  ckpt.meta["layouts"][name] = m.layout();
  ckpt.put(name, m.params());
}

nn::Mlp get_mlp(const Checkpoint& ckpt, const std::string& name) {
  if (!ckpt.meta.contains("layouts") || !ckpt.meta["layouts"].contains(name))
    throw DataError("checkpoint has no network '" + name + "'");
  nn::Mlp m = nn::Mlp::from_layout(ckpt.meta["layouts"][name]);
  const auto& p = ckpt.get(name);
  if (p.size() != m.param_count()) throw DataError("checkpoint tensor '" + name + "' has the wrong size");
  std::copy(p.begin(), p.end(), m.params().begin());
  return m;
}

}  // namespace oncoclip::train
