#include "oncoclip/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "oncoclip/checkpoint.hpp"
#include "oncoclip/clfmetrics.hpp"
#include "oncoclip/error.hpp"
#include "oncoclip/io.hpp"
#include "oncoclip/parallel.hpp"
#include "oncoclip/retrieval.hpp"
#include "oncoclip/survival.hpp"
#include "oncoclip/synth.hpp"
#include "oncoclip/textmetrics.hpp"
#include "oncoclip/train.hpp"
#include "oncoclip/volume.hpp"
#include "oncoclip/zeroshot.hpp"

namespace oncoclip::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Semantically invalid flag combinations; reported like parse errors.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kReportVersion = 1;

std::string hex(const unsigned char* p, std::size_t n) {
  std::ostringstream s;
  for (std::size_t i = 0; i < n; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(p[i]);
  return s.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

json metric_definitions(std::initializer_list<const char*> names) {
  static const std::map<std::string, std::string> kDefs{
      {"auc", "roc-auc/mann-whitney-midrank/v1"},
      {"prauc", "average-precision/step/v1"},
      {"youden", "youden-j/max-then-sensitivity/v1"},
      {"bootstrap", "percentile-bootstrap/linear-interp/redraw-undefined/v1"},
      {"recall_at_k", "recall-at-k/ties-by-index/v1"},
      {"km", "kaplan-meier/v1"},
      {"logrank", "log-rank/hypergeometric-variance/v1"},
      {"cox", "cox-ph/breslow/newton-raphson/v1"},
      {"harrell_c", "harrell-c/tied-risk-half/v1"},
      {"ipcw_c", "uno-c/ipcw-left-limit/v1"},
      {"td_auc", "cumulative-dynamic-auc/ipcw/v1"},
      {"brier", "graf-brier/ipcw/v1"},
      {"bleu", "corpus-bleu/uniform-weights/epsilon-1e-9/v1"},
      {"meteor", "meteor-lite/exact-unigram/v1"},
      {"rouge_l", "rouge-l/f1/v1"},
      {"tokenizer", text::kTokenizerVersion},
      {"zeroshot_max", "max-similarity-ensemble/s1-minus-s0/v1"},
      {"zeroshot_stochastic", "stochastic-prompt-pairs/percentile/v1"},
      {"fusion", "mean-logit/v1"},
      {"stage1_metric", "macro-ovr-auc/mean-over-heads/v1"},
      {"stage2_metric", "mean-recall-at-1/i2t-t2i/v1"},
  };
  json j = json::object();
  for (const char* n : names) j[n] = kDefs.at(n);
  return j;
}

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string(what) + ": not a number list: '" + s + "'");
    }
  }
  return out;
}

struct Report {
  json result = json::object();
  RunManifest manifest;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// Label CSV `id,label`, joined to `ids` by id.
std::vector<int> labels_for(const std::vector<std::string>& ids, const std::string& path, const char* column = "label") {
  const auto t = io::read_csv(path);
  const auto idc = t.column("id"), lc = t.column(column);
  const auto values = t.integers(lc);
  std::map<std::string, int> by_id;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (!by_id.emplace(t.rows[i][idc], values[i]).second) throw DataError(path + ": duplicate id " + t.rows[i][idc]);
  std::vector<int> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError(path + ": no label for id " + id);
    out.push_back(it->second);
  }
  return out;
}

void check_ids_unique(const std::vector<std::string>& ids, const std::string& src) {
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw DataError(src + ": duplicate id " + id);
}

// ---- synth cohort directories --------------------------------------------

struct CohortDir {
  std::vector<std::string> ids;
  Matrix features;
  io::CsvTable labels;
};

CohortDir load_cohort_dir(const std::string& dir, RunManifest& m) {
  const auto fpath = join(dir, "features.csv"), lpath = join(dir, "labels.csv");
  m.add_input(fpath);
  m.add_input(lpath);
  auto e = io::read_embeddings(fpath);
  check_ids_unique(e.ids, fpath);
  auto labels = io::read_csv(lpath);
  if (labels.rows.size() != e.ids.size() || labels.strings(labels.column("id")) != e.ids)
    throw DataError(lpath + ": ids do not match features.csv");
  return {std::move(e.ids), std::move(e.values), std::move(labels)};
}

train::Stage1Data stage1_from(const CohortDir& c) {
  train::Stage1Data d{c.features, std::vector<std::array<int, 14>>(c.ids.size())};
  for (std::size_t k = 0; k < 14; ++k) {
    const auto col = c.labels.column("a" + std::to_string(k + 1));
    const auto v = c.labels.integers(col);
    for (std::size_t i = 0; i < v.size(); ++i) d.labels[i][k] = v[i];
  }
  return d;
}

std::map<std::string, train::PhaseSet> load_phases(const std::string& dir, RunManifest& m) {
  const auto path = join(dir, "phases.csv");
  m.add_input(path);
  const auto t = io::read_csv(path);
  const auto idc = t.column("id"), pc = t.column("phase");
  std::vector<std::size_t> dcols;
  for (std::size_t k = 0;; ++k) {
    auto c = t.find("d" + std::to_string(k));
    if (!c) break;
    dcols.push_back(*c);
  }
  if (dcols.empty()) throw DataError(path + ": no feature columns");
  std::vector<std::vector<double>> cols;
  for (auto c : dcols) cols.push_back(t.numbers(c));
  std::map<std::string, train::PhaseSet> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i][pc].size() != 1) throw DataError(path + ": phase must be one of N, A, V, D");
    std::vector<double> f;
    for (const auto& c : cols) f.push_back(c[i]);
    try {
      out[t.rows[i][idc]].set(train::phase_from_tag(t.rows[i][pc][0]), std::move(f));
    } catch (const std::invalid_argument& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  return out;
}

std::vector<train::PairedSample> load_pairs(const std::string& dir, const nn::TextEncoder& text, RunManifest& m,
                                            std::vector<std::string>* ids_out = nullptr) {
  auto phases = load_phases(dir, m);
  const auto tpath = join(dir, "tokens.jsonl");
  m.add_input(tpath);
  std::vector<train::PairedSample> out;
  std::vector<std::string> ids;
  for (const auto& j : io::read_jsonl(tpath)) {
    train::PairedSample s;
    const std::string id = j.at("id").get<std::string>();
    auto it = phases.find(id);
    if (it == phases.end()) throw DataError(tpath + ": id " + id + " has no phases");
    s.phases = it->second;
    for (const auto& v : j.at("versions")) {
      const auto tokens = v.get<std::vector<std::uint32_t>>();
      for (auto t : tokens)
        if (t >= text.vocab()) throw DataError(tpath + ": token id out of range for id " + id);
      if (tokens.empty()) throw DataError(tpath + ": empty report for id " + id);
      s.text.push_back(nn::forward_text(text, tokens, nullptr));
    }
    out.push_back(std::move(s));
    ids.push_back(id);
  }
  if (out.empty()) throw DataError(tpath + ": no reports");
  check_ids_unique(ids, tpath);
  if (ids_out) *ids_out = std::move(ids);
  return out;
}

std::vector<std::size_t> hidden_from(const json& cfg, std::vector<std::size_t> fallback) {
  return cfg.contains("hidden") ? cfg["hidden"].get<std::vector<std::size_t>>() : fallback;
}

// ---- subcommands ---------------------------------------------------------

struct PrepArgs {
  std::string in, mask, out, patch_out, center;
  std::string strategy = "largest_axial_lesion";
  double level = volume::kWindowLevel, width = volume::kWindowWidth;
  bool augment = false;
  std::uint64_t seed = 0;
};

Report cmd_prep(const PrepArgs& a) {
  Report r;
  r.manifest.seed = a.seed;
  r.manifest.add_input(a.in);
  const auto vol = volume::read_kvol_volume(a.in);
  volume::RoiPoint roi;
  if (!a.center.empty()) {
    if (!a.mask.empty()) throw UsageError("--center and --mask are mutually exclusive");
    const auto c = parse_list(a.center, "--center");
    if (c.size() != 3) throw UsageError("--center needs three comma-separated millimetre coordinates");
    roi.center = {c[0], c[1], c[2]};
  } else if (!a.mask.empty()) {
    r.manifest.add_input(a.mask);
    const auto mask = volume::read_kvol_mask(a.mask);
    const auto strategy = a.strategy == "foreground_centroid" ? volume::RoiStrategy::foreground_centroid
                                                              : volume::RoiStrategy::largest_axial_lesion;
    roi = volume::locate_roi_center(mask, strategy);
  } else {
    throw UsageError("prep needs --mask or --center");
  }
  const auto out = volume::preprocess(vol, roi, a.level, a.width);
  volume::write_kvol(a.out, out);
  r.manifest.outputs.push_back(a.out);
  r.result = {{"dims", out.dims},
              {"spacing", out.spacing},
              {"origin", out.origin},
              {"roi_center", roi.center},
              {"window", {{"level", a.level}, {"width", a.width}}},
              {"out", a.out}};
  if (!a.patch_out.empty()) {
    volume::AugConfig cfg = a.augment ? volume::AugConfig{} : volume::AugConfig::identity(volume::kPatchDims);
    cfg.seed = derive_seed(a.seed, 1);
    const auto patch = volume::augment(out, cfg);
    volume::write_kvol(a.patch_out, patch);
    r.manifest.outputs.push_back(a.patch_out);
    r.result["patch"] = {{"dims", patch.dims}, {"augmented", a.augment}, {"out", a.patch_out}};
  }
  r.manifest.config = {{"strategy", a.strategy}, {"augment", a.augment}};
  return r;
}

struct SynthArgs {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out, config;
  std::size_t phases = 0;
};

Report cmd_synth(const SynthArgs& a) {
  Report r;
  synth::SynthConfig cfg;
  if (!a.config.empty()) {
    r.manifest.add_input(a.config);
    cfg = synth::SynthConfig::from_json(io::read_json(a.config));
  }
  if (a.phases) cfg.phases = a.phases;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("synth config: ") + e.what());
  }
  if (a.n == 0) throw UsageError("--n must be >= 1");
  const auto c = synth::gen_cohort(a.n, a.seed, cfg);
  ensure_dir(a.out);
  r.manifest.seed = a.seed;
  r.manifest.config = cfg.to_json();

  std::vector<std::string> ids;
  for (std::size_t i = 0; i < c.size(); ++i) ids.push_back(std::to_string(i));
  io::write_embeddings(join(a.out, "features.csv"), {ids, c.features()});

  std::vector<std::string> pheader{"id", "phase"};
  for (std::size_t k = 0; k < cfg.feature_dim; ++k) pheader.push_back("d" + std::to_string(k));
  std::vector<std::vector<std::string>> prows, lrows, srows;
  std::vector<std::string> lheader{"id"};
  for (std::size_t k = 0; k < synth::kNumAttributes; ++k) lheader.push_back("a" + std::to_string(k + 1));
  lheader.push_back("malignant");
  lheader.push_back("aggressive");
  std::vector<std::string> sheader{"id", "time", "event", "score"};
  for (std::size_t k = 0; k < cfg.latent_dim; ++k) sheader.push_back("cov" + std::to_string(k + 1));
  const auto oracle = synth::oracle_scores(c);
  std::ofstream tokens(join(a.out, "tokens.jsonl"));
  if (!tokens) throw DataError("cannot write tokens.jsonl");
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& p = c.patients[i];
    for (std::size_t k = 0; k < p.phase_tags.size(); ++k) {
      std::vector<std::string> row{ids[i], std::string(1, p.phase_tags[k])};
      for (double v : p.phase_features[k]) row.push_back(io::format_double(v));
      prows.push_back(std::move(row));
    }
    std::vector<std::string> lrow{ids[i]};
    for (int l : p.labels) lrow.push_back(std::to_string(l));
    lrow.push_back(std::to_string(p.malignant));
    lrow.push_back(std::to_string(p.aggressive));
    lrows.push_back(std::move(lrow));
    std::vector<std::string> srow{ids[i], io::format_double(p.time), std::to_string(p.event),
                                  io::format_double(oracle.linear_predictor[i])};
    for (double v : p.z) srow.push_back(io::format_double(v));
    srows.push_back(std::move(srow));
    json versions = json::array();
    for (std::size_t v = 0; v < 5; ++v) versions.push_back(c.tokens(i, v));
    tokens << json{{"id", ids[i]}, {"versions", versions}, {"text", c.text(i)}}.dump() << '\n';
  }
  tokens.close();
  io::write_csv(join(a.out, "phases.csv"), pheader, prows);
  io::write_csv(join(a.out, "labels.csv"), lheader, lrows);
  io::write_csv(join(a.out, "survival.csv"), sheader, srows);
  io::write_json(join(a.out, "ground_truth.json"), synth::ground_truth_json(c));
  {
    std::ofstream vocab(join(a.out, "vocab.txt"));
    for (const auto& w : synth::vocabulary()) vocab << w << '\n';
  }
  r.manifest.outputs.push_back(a.out);
  for (const char* f : {"features.csv", "phases.csv", "labels.csv", "survival.csv", "tokens.jsonl",
                        "ground_truth.json", "vocab.txt"})
    r.manifest.outputs.push_back(join(a.out, f));

  const auto events = c.events();
  const auto mal = c.malignancy();
  r.result = {{"n", c.size()},
              {"seed", a.seed},
              {"fingerprint", hex64(c.fingerprint)},
              {"event_rate", std::count(events.begin(), events.end(), 1) / static_cast<double>(c.size())},
              {"malignant_rate", std::count(mal.begin(), mal.end(), 1) / static_cast<double>(c.size())},
              {"out", a.out}};
  return r;
}

struct TrainArgs {
  std::string train, val, config, out, init, log;
  std::size_t epochs = 0;
  bool epochs_set = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

Report cmd_pretrain_image(const TrainArgs& a) {
  Report r;
  json raw = json::object();
  if (!a.config.empty()) {
    r.manifest.add_input(a.config);
    raw = io::read_json(a.config);
  }
  auto cfg = train::Stage1Config::from_json(raw);
  if (a.epochs_set) cfg.epochs = a.epochs;
  if (a.seed_set) cfg.seed = a.seed;
  const auto tr = load_cohort_dir(a.train, r.manifest), va = load_cohort_dir(a.val, r.manifest);
  const auto hidden = hidden_from(raw, {32});
  const auto enc = nn::ImageEncoder::make(tr.features.cols, hidden, derive_seed(cfg.seed, 100));
  const auto heads = nn::MultiTaskHeads::make(enc.feature_dim(), derive_seed(cfg.seed, 101));
  const auto res = train::train_stage1(stage1_from(tr), stage1_from(va), enc, heads, cfg);

  r.manifest.seed = cfg.seed;
  r.manifest.config = cfg.to_json();
  r.manifest.config["hidden"] = hidden;
  r.manifest.metric_definitions = metric_definitions({"auc", "stage1_metric"});
  ensure_dir(a.out);
  Checkpoint ck;
  ck.meta["kind"] = "stage1";
  ck.meta["config"] = r.manifest.config;
  ck.meta["best_epoch"] = res.best_epoch;
  train::put_mlp(ck, "backbone", res.encoder.backbone);
  for (std::size_t h = 0; h < res.heads.size(); ++h) train::put_mlp(ck, "head" + std::to_string(h), res.heads.heads[h]);
  ck.meta["run_manifest"] = "run_manifest.json";
  save_checkpoint(a.out, ck);
  const auto log_path = a.log.empty() ? join(a.out, "train_log.jsonl") : a.log;
  train::write_log(log_path, res.log);
  r.manifest.outputs = {a.out, log_path};
  r.result = {{"best_metric", res.best_metric}, {"best_epoch", res.best_epoch}, {"epochs", cfg.epochs},
              {"checkpoint", a.out},            {"log", log_path}};
  return r;
}

nn::TextEncoder text_encoder_from(const json& raw, std::size_t vocab, std::uint64_t seed) {
  const std::size_t dim = raw.value("embed_dim", std::size_t{64});
  return nn::TextEncoder::make(vocab, dim, 0.0, raw.value("text_seed", derive_seed(seed, 200)));
}

Report cmd_pretrain_clip(const TrainArgs& a) {
  Report r;
  json raw = json::object();
  if (!a.config.empty()) {
    r.manifest.add_input(a.config);
    raw = io::read_json(a.config);
  }
  auto cfg = train::Stage2Config::from_json(raw);
  if (a.epochs_set) cfg.epochs = a.epochs;
  if (a.seed_set) cfg.seed = a.seed;

  const auto vocab_path = join(a.train, "vocab.txt");
  r.manifest.add_input(vocab_path);
  const auto vocab = zeroshot::Vocabulary::from_file(vocab_path);
  const auto text = text_encoder_from(raw, vocab.size(), cfg.seed);
  std::vector<std::string> val_ids;
  const auto tr = load_pairs(a.train, text, r.manifest);
  const auto va = load_pairs(a.val, text, r.manifest, &val_ids);

  nn::ImageEncoder enc;
  const std::size_t input = tr.front().phases.get(tr.front().phases.preferred()).size();
  if (!a.init.empty()) {
    const auto init = load_checkpoint(a.init);
    r.manifest.add_input(join(a.init, "params.bin"));
    enc.backbone = train::get_mlp(init, "backbone");
  } else {
    enc = nn::ImageEncoder::make(input, hidden_from(raw, {32}), derive_seed(cfg.seed, 100));
  }
  const auto proj = nn::ProjectionHead::make(enc.feature_dim(), text.dim(), derive_seed(cfg.seed, 102),
                                             raw.value("projection_hidden", std::vector<std::size_t>{}));
  const auto res = train::train_stage2(tr, va, enc, proj, cfg);

  r.manifest.seed = cfg.seed;
  r.manifest.config = cfg.to_json();
  r.manifest.config["embed_dim"] = text.dim();
  r.manifest.metric_definitions = metric_definitions({"recall_at_k", "stage2_metric"});
  ensure_dir(a.out);
  Checkpoint ck;
  ck.meta["kind"] = "stage2";
  ck.meta["config"] = r.manifest.config;
  ck.meta["best_epoch"] = res.best_epoch;
  ck.meta["vocabulary"] = vocab.words();
  ck.meta["text_dim"] = text.dim();
  ck.meta["run_manifest"] = "run_manifest.json";
  train::put_mlp(ck, "backbone", res.encoder.backbone);
  train::put_mlp(ck, "projection", res.projection.net);
  ck.put("text_table", text.table.data);
  const std::vector<double> tau{res.log_inv_tau};
  ck.put("log_inv_tau", tau);
  save_checkpoint(a.out, ck);

  Matrix x(va.size(), input), t(va.size(), text.dim());
  for (std::size_t i = 0; i < va.size(); ++i) {
    const auto& img = va[i].phases.get(va[i].phases.preferred());
    std::copy(img.begin(), img.end(), x.row(i).begin());
    const auto v = nn::l2_normalize(va[i].text[0]);
    std::copy(v.begin(), v.end(), t.row(i).begin());
  }
  const auto img_path = join(a.out, "image_embeddings.csv"), txt_path = join(a.out, "text_embeddings.csv");
  io::write_embeddings(img_path, {val_ids, train::embed_images(res.encoder, res.projection, x)});
  io::write_embeddings(txt_path, {val_ids, t});
  const auto log_path = a.log.empty() ? join(a.out, "train_log.jsonl") : a.log;
  train::write_log(log_path, res.log);
  r.manifest.outputs = {a.out, img_path, txt_path, log_path};
  r.result = {{"best_metric", res.best_metric},
              {"best_epoch", res.best_epoch},
              {"epochs", cfg.epochs},
              {"temperature", std::exp(-res.log_inv_tau)},
              {"checkpoint", a.out},
              {"image_embeddings", img_path},
              {"text_embeddings", txt_path},
              {"log", log_path}};
  return r;
}

struct FinetuneArgs {
  TrainArgs base;
  std::string ckpt, task = "classification", target = "malignant";
};

Report cmd_finetune(const FinetuneArgs& fa) {
  const auto& a = fa.base;
  Report r;
  json raw = json::object();
  if (!a.config.empty()) {
    r.manifest.add_input(a.config);
    raw = io::read_json(a.config);
  }
  raw["task"] = fa.task;
  auto cfg = train::FinetuneConfig::from_json(raw);
  if (a.epochs_set) cfg.epochs = a.epochs;
  if (a.seed_set) cfg.seed = a.seed;

  const auto ck = load_checkpoint(fa.ckpt);
  r.manifest.add_input(join(fa.ckpt, "params.bin"));
  nn::ImageEncoder enc{train::get_mlp(ck, "backbone")};

  const auto tr = load_cohort_dir(a.train, r.manifest), va = load_cohort_dir(a.val, r.manifest);
  auto data_for = [&](const CohortDir& c, const std::string& dir) {
    train::FinetuneData d{c.features, {}, {}, {}};
    if (cfg.task == train::Task::classification) {
      d.labels = c.labels.integers(c.labels.column(fa.target));
    } else {
      const auto path = join(dir, "survival.csv");
      r.manifest.add_input(path);
      const auto s = io::read_csv(path);
      if (s.strings(s.column("id")) != c.ids) throw DataError(path + ": ids do not match features.csv");
      d.time = s.numbers(s.column("time"));
      d.event = s.binary(s.column("event"));
    }
    return d;
  };
  const auto dt = data_for(tr, a.train), dv = data_for(va, a.val);
  if (cfg.task == train::Task::classification && !raw.contains("classes")) {
    int top = 1;
    for (int y : dt.labels) top = std::max(top, y);
    for (int y : dv.labels) top = std::max(top, y);
    cfg.classes = static_cast<std::size_t>(top) + 1;
  }
  const auto res = train::finetune_head(enc, dt, dv, cfg);

  r.manifest.seed = cfg.seed;
  r.manifest.config = cfg.to_json();
  r.manifest.config["target"] = fa.target;
  r.manifest.metric_definitions =
      metric_definitions({cfg.task == train::Task::classification ? "auc" : "harrell_c", "fusion"});
  ensure_dir(a.out);
  Checkpoint out;
  out.meta["kind"] = "finetune";
  out.meta["config"] = r.manifest.config;
  out.meta["run_manifest"] = "run_manifest.json";
  train::put_mlp(out, "backbone", res.encoder.backbone);
  train::put_mlp(out, "head", res.head);
  save_checkpoint(a.out, out);

  const Matrix scores = train::score_head(res.encoder, res.head, dv.inputs);
  const auto pred_path = join(a.out, "predictions.csv");
  std::vector<std::vector<std::string>> rows;
  if (cfg.task == train::Task::cox) {
    for (std::size_t i = 0; i < va.ids.size(); ++i)
      rows.push_back({va.ids[i], io::format_double(dv.time[i]), std::to_string(dv.event[i]), io::format_double(scores(i, 0))});
    io::write_csv(pred_path, {"id", "time", "event", "score"}, rows);
  } else {
    std::vector<std::string> header{"id", "score", "label"};
    for (std::size_t c = 0; c < scores.cols; ++c) header.push_back("p" + std::to_string(c));
    for (std::size_t i = 0; i < va.ids.size(); ++i) {
      const auto p = nn::softmax(scores.row(i));
      std::vector<std::string> row{va.ids[i], io::format_double(p.size() > 1 ? p[1] : p[0]), std::to_string(dv.labels[i])};
      for (double v : p) row.push_back(io::format_double(v));
      rows.push_back(std::move(row));
    }
    io::write_csv(pred_path, header, rows);
  }
  r.manifest.outputs = {a.out, pred_path};

  // Per-phase logits of the validation cohort, the input of `fuse`.
  if (fs::exists(join(a.val, "phases.csv"))) {
    const auto phases = load_phases(a.val, r.manifest);
    std::vector<std::string> header{"id", "phase"};
    for (std::size_t c = 0; c < res.head.output_dim(); ++c) header.push_back("l" + std::to_string(c));
    std::vector<std::vector<std::string>> lrows;
    for (const auto& id : va.ids) {
      auto it = phases.find(id);
      if (it == phases.end()) continue;
      for (auto p : it->second.phases()) {
        const auto f = nn::forward_image(res.encoder, it->second.get(p));
        Matrix fm(1, f.size());
        fm.data = f;
        std::vector<std::string> row{id, std::string(1, train::phase_tag(p))};
        for (double v : res.head.forward(fm).data) row.push_back(io::format_double(v));
        lrows.push_back(std::move(row));
      }
    }
    const auto lpath = join(a.out, "phase_logits.csv");
    io::write_csv(lpath, header, lrows);
    r.manifest.outputs.push_back(lpath);
    r.result["phase_logits"] = lpath;
  }

  json grid = json::array();
  for (const auto& g : res.grid) grid.push_back({{"batch_size", g.batch_size}, {"lr", g.lr}, {"metric", g.metric}});
  r.result.update({{"task", fa.task},
                   {"metric", res.metric},
                   {"metric_name", cfg.task == train::Task::classification ? "macro_ovr_auc" : "harrell_c"},
                   {"batch_size", res.batch_size},
                   {"lr", res.lr},
                   {"grid", grid},
                   {"checkpoint", a.out},
                   {"predictions", pred_path}});
  return r;
}

struct ZeroshotArgs {
  std::string prompts, embeddings, labels, ckpt, vocab;
  std::string strategy = "max";
  std::size_t iters = 1000;
  std::uint64_t seed = 0;
};

Report cmd_eval_zeroshot(const ZeroshotArgs& a) {
  Report r;
  r.manifest.seed = a.seed;
  for (const auto* p : {&a.prompts, &a.embeddings, &a.labels}) r.manifest.add_input(*p);
  auto ps = zeroshot::load_prompts_file(a.prompts);
  const auto ck = load_checkpoint(a.ckpt);
  r.manifest.add_input(join(a.ckpt, "params.bin"));
  if (!ck.has("text_table")) throw DataError(a.ckpt + ": checkpoint has no text encoder");
  nn::TextEncoder text;
  const std::size_t dim = ck.meta.at("text_dim").get<std::size_t>();
  const auto& table = ck.get("text_table");
  text.table = Matrix(table.size() / dim, dim);
  text.table.data = table;
  zeroshot::Vocabulary vocab;
  if (!a.vocab.empty()) {
    r.manifest.add_input(a.vocab);
    vocab = zeroshot::Vocabulary::from_file(a.vocab);
  } else {
    vocab = zeroshot::Vocabulary(ck.meta.at("vocabulary").get<std::vector<std::string>>());
  }
  zeroshot::embed_prompts(ps, text, vocab);

  const auto emb = io::read_embeddings(a.embeddings);
  const auto y = labels_for(emb.ids, a.labels);
  for (int v : y)
    if (v < 0 || static_cast<std::size_t>(v) >= ps.classes()) throw DataError(a.labels + ": label outside the prompt classes");

  r.manifest.config = {{"strategy", a.strategy}, {"iterations", a.iters}, {"classes", ps.class_names}};
  r.result = {{"strategy", a.strategy}, {"classes", ps.class_names}, {"n", y.size()},
              {"prompts_per_class", ps.expanded.front().size()}};
  if (a.strategy == "max") {
    r.manifest.metric_definitions = metric_definitions({"zeroshot_max", "auc", "tokenizer"});
    const auto res = zeroshot::zs_max_similarity(emb.values, ps);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < res.size(); ++i) correct += res[i].predicted == static_cast<std::size_t>(y[i]);
    r.result["accuracy"] = correct / static_cast<double>(y.size());
    if (ps.classes() == 2) r.result["auc"] = metrics::roc_auc(zeroshot::zs_scores(res), y);
  } else {
    r.manifest.metric_definitions = metric_definitions({"zeroshot_stochastic", "auc", "tokenizer"});
    const auto res = zeroshot::zs_stochastic(emb.values, y, ps, a.iters, a.seed);
    r.result.update({{"auc_mean", res.mean}, {"ci", {res.lo, res.hi}}, {"iterations", a.iters}, {"seed", a.seed}});
  }
  return r;
}

struct RetrievalArgs {
  std::string images, texts, direction = "both", ks = "1,3,5";
};

Report cmd_eval_retrieval(const RetrievalArgs& a) {
  Report r;
  r.manifest.add_input(a.images);
  r.manifest.add_input(a.texts);
  const auto u = io::read_embeddings(a.images), v = io::read_embeddings(a.texts);
  if (u.ids != v.ids) throw DataError("image and text embeddings must list the same ids in the same order");
  check_ids_unique(u.ids, a.images);
  const auto s = retrieval::similarity_matrix(u.values, v.values);
  std::vector<retrieval::Direction> dirs;
  if (a.direction == "both")
    dirs = {retrieval::Direction::i2t, retrieval::Direction::t2i};
  else
    dirs = {retrieval::direction_from_string(a.direction)};
  json results = json::array();
  for (double kd : parse_list(a.ks, "--k")) {
    if (kd < 1 || kd != std::floor(kd)) throw UsageError("--k values must be positive integers");
    const auto k = static_cast<std::size_t>(kd);
    if (k > s.rows) throw DataError("k = " + std::to_string(k) + " exceeds the gallery size");
    for (auto d : dirs)
      results.push_back({{"direction", retrieval::to_string(d)}, {"k", k}, {"recall", retrieval::recall_at_k(s, k, d)}});
  }
  r.manifest.config = {{"direction", a.direction}, {"k", a.ks}};
  r.manifest.metric_definitions = metric_definitions({"recall_at_k"});
  r.result = {{"n", s.rows}, {"results", results}};
  return r;
}

struct SurvivalArgs {
  std::string in, analysis = "km", group, times, covariates, train;
  double tau = 0.0;
};

json curve_json(const survival::KmCurve& c) {
  json pts = json::array();
  for (std::size_t k = 0; k < c.times.size(); ++k)
    pts.push_back({{"time", c.times[k]},
                   {"survival", c.survival[k]},
                   {"at_risk", c.at_risk[k]},
                   {"events", c.events[k]},
                   {"censored", c.censored[k]}});
  return pts;
}

json logrank_json(const survival::LogRank& lr) {
  return {{"chi2", lr.chi2}, {"p", lr.p}, {"observed_a", lr.observed_a}, {"expected_a", lr.expected_a}, {"variance", lr.variance}};
}

Matrix covariate_matrix(const io::CsvTable& t, const std::vector<std::string>& names) {
  Matrix x(t.rows.size(), names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto col = t.numbers(t.column(names[k]));
    for (std::size_t i = 0; i < col.size(); ++i) x(i, k) = col[i];
  }
  return x;
}

Report cmd_eval_survival(const SurvivalArgs& a) {
  Report r;
  r.manifest.add_input(a.in);
  const auto t = io::read_csv(a.in);
  const auto time = t.numbers(t.column("time"));
  const auto event = t.binary(t.column("event"));
  for (double v : time)
    if (v < 0) throw DataError(a.in + ": negative time");
  const auto score = t.numbers(t.column("score"));
  r.manifest.config = {{"analysis", a.analysis}, {"group", a.group}, {"times", a.times}, {"tau", a.tau}};
  r.result = {{"analysis", a.analysis}, {"n", time.size()}};

  std::vector<std::string> covs;
  if (!a.covariates.empty()) {
    std::stringstream ss(a.covariates);
    for (std::string c; std::getline(ss, c, ',');) covs.push_back(c);
  } else {
    for (const auto& h : t.header)
      if (h.rfind("cov", 0) == 0) covs.push_back(h);
  }

  auto censoring = [&]() {
    if (a.train.empty()) return survival::censoring_km(time, event);
    r.manifest.add_input(a.train);
    const auto tt = io::read_csv(a.train);
    return survival::censoring_km(tt.numbers(tt.column("time")), tt.binary(tt.column("event")));
  };

  if (a.analysis == "km" || a.analysis == "logrank") {
    std::vector<int> group;
    std::vector<std::string> names;
    if (!a.group.empty()) {
      const auto g = t.strings(t.column(a.group));
      std::set<std::string> distinct(g.begin(), g.end());
      if (distinct.size() != 2) throw DataError("--group column must hold exactly two values");
      names.assign(distinct.begin(), distinct.end());
      for (const auto& v : g) group.push_back(v == names[1] ? 1 : 0);
    } else {
      const auto split = survival::dichotomize_median(score);
      group = split.high;
      names = {"low", "high"};
      r.result["median_score"] = split.median;
    }
    const auto lr = survival::logrank_test(time, event, group);
    r.result["logrank"] = logrank_json(lr);
    r.result["group_a"] = names[1];
    if (a.analysis == "km") {
      json curves = json::object();
      for (int g = 0; g < 2; ++g) {
        std::vector<double> tg;
        std::vector<int> eg;
        for (std::size_t i = 0; i < time.size(); ++i)
          if (group[i] == g) tg.push_back(time[i]), eg.push_back(event[i]);
        curves[names[g]] = curve_json(survival::km_estimate(tg, eg));
      }
      r.result["curves"] = curves;
    }
    r.manifest.metric_definitions = metric_definitions({"km", "logrank"});
  } else if (a.analysis == "cox") {
    if (covs.empty()) covs = {"score"};
    const auto fit = survival::cox_fit(covariate_matrix(t, covs), time, event);
    if (fit.diverged) throw ConvergenceError("Cox fit diverged (coefficients beyond the guard; likely separation)");
    if (!fit.converged) throw ConvergenceError("Cox fit did not converge");
    json table = json::array();
    for (std::size_t k = 0; k < covs.size(); ++k)
      table.push_back({{"covariate", covs[k]},
                       {"beta", fit.beta[k]},
                       {"se", fit.se[k]},
                       {"hazard_ratio", fit.hazard_ratio[k]},
                       {"ci", {fit.ci_lo[k], fit.ci_hi[k]}},
                       {"z", fit.z[k]},
                       {"p", fit.p[k]}});
    r.result.update({{"coefficients", table},
                     {"loglik", fit.loglik},
                     {"loglik_null", fit.loglik_null},
                     {"iterations", fit.iterations}});
    r.manifest.metric_definitions = metric_definitions({"cox"});
  } else if (a.analysis == "cindex") {
    r.result["harrell_c"] = survival::harrell_cindex(time, event, score);
    if (a.tau > 0) {
      r.result["ipcw_c"] = survival::ipcw_cindex(censoring(), time, event, score, a.tau);
      r.result["tau"] = a.tau;
    }
    r.manifest.metric_definitions = metric_definitions({"harrell_c", "ipcw_c"});
  } else if (a.analysis == "td-auc" || a.analysis == "brier") {
    if (a.times.empty()) throw UsageError("--times is required for " + a.analysis);
    const auto eval = parse_list(a.times, "--times");
    const auto g = censoring();
    json out = json::array();
    if (a.analysis == "td-auc") {
      const auto aucs = survival::cumulative_dynamic_auc(g, time, event, score, eval);
      for (std::size_t k = 0; k < eval.size(); ++k) out.push_back({{"time", eval[k]}, {"auc", aucs[k]}});
      r.manifest.metric_definitions = metric_definitions({"td_auc"});
    } else {
      // Survival predictions from a Cox model on the covariates (default: score).
      if (covs.empty()) covs = {"score"};
      const Matrix x = covariate_matrix(t, covs);
      const auto fit = survival::cox_fit(x, time, event);
      if (!fit.converged || fit.diverged) throw ConvergenceError("Cox fit for survival predictions did not converge");
      const auto base = survival::breslow_baseline(fit, x, time, event);
      for (double te : eval) {
        std::vector<double> s(time.size());
        for (std::size_t i = 0; i < time.size(); ++i) s[i] = survival::survival_at(fit, base, x.row(i), te);
        out.push_back({{"time", te}, {"brier", survival::ipcw_brier(g, s, time, event, te)}});
      }
      r.manifest.metric_definitions = metric_definitions({"brier", "cox"});
    }
    r.result["series"] = out;
  } else {
    throw UsageError("unknown analysis " + a.analysis);
  }
  return r;
}

struct ClfArgs {
  std::string in, metric = "auc";
  std::size_t bootstrap = metrics::kDefaultResamples;
  std::uint64_t seed = 0;
};

Report cmd_eval_clf(const ClfArgs& a) {
  Report r;
  r.manifest.add_input(a.in);
  r.manifest.seed = a.seed;
  const auto t = io::read_csv(a.in);
  const auto score = t.numbers(t.column("score"));
  const auto label = t.binary(t.column("label"));
  metrics::ResampleMetric fn;
  auto sub = [&](std::span<const std::size_t> idx) {
    std::pair<std::vector<double>, std::vector<int>> s;
    for (auto i : idx) s.first.push_back(score[i]), s.second.push_back(label[i]);
    return s;
  };
  if (a.metric == "auc") {
    fn = [&](std::span<const std::size_t> idx) {
      const auto [s, y] = sub(idx);
      return metrics::roc_auc(s, y);
    };
  } else if (a.metric == "prauc") {
    fn = [&](std::span<const std::size_t> idx) {
      const auto [s, y] = sub(idx);
      return metrics::pr_auc(s, y);
    };
  } else {
    fn = [&](std::span<const std::size_t> idx) {
      const auto [s, y] = sub(idx);
      return metrics::youden_threshold(s, y).j;
    };
    const auto yr = metrics::youden_threshold(score, label);
    r.result.update({{"threshold", yr.threshold}, {"sensitivity", yr.sensitivity}, {"specificity", yr.specificity}, {"f1", yr.f1}});
  }
  r.manifest.config = {{"metric", a.metric}, {"bootstrap", a.bootstrap}};
  r.manifest.metric_definitions = metric_definitions({a.metric == "auc" ? "auc" : a.metric == "prauc" ? "prauc" : "youden", "bootstrap"});
  std::vector<std::size_t> all(score.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  r.result.update({{"metric", a.metric}, {"n", score.size()}});
  if (a.bootstrap > 0) {
    const auto b = metrics::bootstrap_ci(fn, score.size(), a.bootstrap, a.seed);
    r.result.update({{"point", b.point}, {"ci", {b.lo, b.hi}}, {"n_resamples", b.n_resamples}, {"seed", a.seed}, {"redraws", b.redraws}});
  } else {
    r.result.update({{"point", fn(all)}, {"ci", nullptr}, {"n_resamples", 0}, {"seed", a.seed}});
  }
  return r;
}

struct TextArgs {
  std::string in, metric = "all";
};

Report cmd_eval_text(const TextArgs& a) {
  Report r;
  r.manifest.add_input(a.in);
  std::vector<text::TokenPair> pairs;
  for (const auto& j : io::read_jsonl(a.in)) {
    if (!j.contains("candidate") || !j.contains("reference")) throw DataError(a.in + ": records need candidate and reference");
    pairs.push_back({text::tokenize(j["candidate"].get<std::string>()), text::tokenize(j["reference"].get<std::string>())});
  }
  if (pairs.empty()) throw DataError(a.in + ": no records");
  json out = json::array();
  auto want = [&](const std::string& m) { return a.metric == "all" || a.metric == m; };
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto name = "bleu" + std::to_string(n);
    if (!want(name)) continue;
    const auto b = text::bleu(pairs, n);
    out.push_back({{"metric", name}, {"score", b.score}, {"precisions", b.precisions}, {"brevity_penalty", b.brevity_penalty}});
  }
  if (want("meteor")) {
    double s = 0;
    for (const auto& p : pairs) s += text::meteor_lite(p).score;
    out.push_back({{"metric", "meteor"}, {"score", s / static_cast<double>(pairs.size())}});
  }
  if (want("rouge-l")) {
    double s = 0;
    for (const auto& p : pairs) s += text::rouge_l(p).f1;
    out.push_back({{"metric", "rouge-l"}, {"score", s / static_cast<double>(pairs.size())}});
  }
  r.manifest.config = {{"metric", a.metric}};
  r.manifest.metric_definitions = metric_definitions({"bleu", "meteor", "rouge_l", "tokenizer"});
  r.result = {{"n", pairs.size()}, {"metrics", out}};
  return r;
}

struct FuseArgs {
  std::string in, labels, phases, out;
};

Report cmd_fuse(const FuseArgs& a) {
  Report r;
  r.manifest.add_input(a.in);
  r.manifest.add_input(a.labels);
  const auto t = io::read_csv(a.in);
  const auto idc = t.column("id"), pc = t.column("phase");
  std::vector<std::size_t> lcols;
  for (std::size_t c = 0;; ++c) {
    auto col = t.find("l" + std::to_string(c));
    if (!col) break;
    lcols.push_back(*col);
  }
  if (lcols.size() < 2) throw DataError(a.in + ": need logit columns l0, l1, ..");
  std::vector<std::vector<double>> cols;
  for (auto c : lcols) cols.push_back(t.numbers(c));
  std::vector<std::string> ids;
  std::map<std::string, std::map<char, std::vector<double>>> logits;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& id = t.rows[i][idc];
    const auto& tag = t.rows[i][pc];
    if (tag.size() != 1 || std::string("NAVD").find(tag[0]) == std::string::npos)
      throw DataError(a.in + ": phase must be one of N, A, V, D");
    if (!logits.count(id)) ids.push_back(id);
    std::vector<double> l;
    for (const auto& c : cols) l.push_back(c[i]);
    if (!logits[id].emplace(tag[0], std::move(l)).second) throw DataError(a.in + ": duplicate phase for id " + id);
  }
  const auto y = labels_for(ids, a.labels);

  std::vector<std::string> settings;
  if (a.phases.empty()) {
    for (std::size_t k = 1; k <= 4; ++k) settings.push_back(std::string("AVND").substr(0, k));
  } else {
    for (char c : a.phases)
      if (std::string("NAVD").find(c) == std::string::npos) throw UsageError("--phases takes letters from NAVD");
    settings.push_back(a.phases);
  }
  json out = json::array();
  bool invariant = true;
  std::vector<std::vector<std::string>> fused_rows;
  for (const auto& set : settings) {
    std::vector<double> scores;
    std::vector<int> yy;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::vector<std::vector<double>> per;
      for (char c : set)
        if (auto it = logits[ids[i]].find(c); it != logits[ids[i]].end()) per.push_back(it->second);
      if (per.empty()) continue;
      const auto fused = train::fuse_logits(per);
      std::reverse(per.begin(), per.end());
      const auto rev = train::fuse_logits(per);
      for (std::size_t c = 0; c < fused.size(); ++c)
        if (std::abs(fused[c] - rev[c]) > 1e-12 * std::max(1.0, std::abs(fused[c]))) invariant = false;
      const auto p = nn::softmax(fused);
      scores.push_back(p[1]);
      yy.push_back(y[i]);
      if (set == settings.back()) fused_rows.push_back({ids[i], io::format_double(p[1]), std::to_string(y[i])});
    }
    json s{{"phases", set}, {"patients", scores.size()}};
    if (cols.size() == 2 && !scores.empty()) {
      try {
        s["auc"] = metrics::roc_auc(scores, yy);
      } catch (const UndefinedMetric&) {
        s["auc"] = nullptr;
      }
    }
    out.push_back(s);
  }
  if (!a.out.empty()) {
    io::write_csv(a.out, {"id", "score", "label"}, fused_rows);
    r.manifest.outputs.push_back(a.out);
  }
  r.manifest.config = {{"phases", a.phases}};
  r.manifest.metric_definitions = metric_definitions({"fusion", "auc"});
  r.result = {{"settings", out}, {"permutation_invariant", invariant}};
  return r;
}

json error_json(const std::string& command, const std::string& type, const std::string& message) {
  return {{"version", kReportVersion}, {"command", command}, {"error", {{"type", type}, {"message", message}}}};
}

}  // namespace

// ---------------------------------------------------------------------------

void RunManifest::add_input(const std::string& path) {
  for (const auto& [p, d] : inputs)
    if (p == path) return;
  inputs.emplace_back(path, sha256_file(path));
}

std::string RunManifest::config_hash() const { return sha256_hex(json{{"args", args}, {"config", config}}.dump()); }

json RunManifest::to_json() const {
  json in = json::array();
  for (const auto& [p, d] : inputs) in.push_back({{"path", p}, {"sha256", d}});
  return {{"command", command},         {"args", args},
          {"config", config},           {"config_hash", config_hash()},
          {"seed", seed},               {"inputs", in},
          {"metric_definitions", metric_definitions}, {"outputs", outputs},
          {"version", kReportVersion}};
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  return hex(md, len);
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  return hex(md, len);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"oncoclip: contrastive CT-report pre-training and clinical evaluation toolkit", "oncoclip"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (ONCOCLIP_THREADS overrides)")->check(CLI::PositiveNumber);

  PrepArgs prep;
  auto* s_prep = app.add_subcommand("prep", "ROI crop, resample and window a KVOL volume");
  s_prep->add_option("--in", prep.in, "input volume (.kvol)")->required()->check(CLI::ExistingFile);
  s_prep->add_option("--mask", prep.mask, "label mask (.kvol)")->check(CLI::ExistingFile);
  s_prep->add_option("--center", prep.center, "ROI centre x,y,z in mm instead of a mask");
  s_prep->add_option("--strategy", prep.strategy, "ROI strategy")
      ->check(CLI::IsMember({"largest_axial_lesion", "foreground_centroid"}));
  s_prep->add_option("--level", prep.level, "window level (HU)");
  s_prep->add_option("--width", prep.width, "window width (HU)")->check(CLI::PositiveNumber);
  s_prep->add_option("--out", prep.out, "output volume (.kvol)")->required();
  s_prep->add_option("--patch-out", prep.patch_out, "also write a 128x128x32 patch");
  s_prep->add_flag("--augment", prep.augment, "random augmentation for the patch instead of a centre crop");
  s_prep->add_option("--seed", prep.seed, "augmentation seed");

  SynthArgs syn;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic cohort with known ground truth");
  s_synth->add_option("--n", syn.n, "patients")->required();
  s_synth->add_option("--seed", syn.seed, "cohort seed");
  s_synth->add_option("--out", syn.out, "output directory")->required();
  s_synth->add_option("--config", syn.config, "cohort config JSON")->check(CLI::ExistingFile);
  s_synth->add_option("--phases", syn.phases, "phases per patient (1-4)")->check(CLI::Range(1, 4));

  auto add_train = [](CLI::App* s, TrainArgs& t) {
    s->add_option("--train", t.train, "training cohort directory")->required()->check(CLI::ExistingDirectory);
    s->add_option("--val", t.val, "validation cohort directory")->required()->check(CLI::ExistingDirectory);
    s->add_option("--config", t.config, "run config JSON")->check(CLI::ExistingFile);
    s->add_option("--out", t.out, "output checkpoint directory")->required();
    s->add_option("--log", t.log, "per-epoch JSONL log (default: <out>/train_log.jsonl)");
    s->add_option("--epochs", t.epochs, "override config epochs");
    s->add_option("--seed", t.seed, "override config seed");
  };
  TrainArgs img;
  auto* s_img = app.add_subcommand("pretrain-image", "stage 1: multi-task attribute pre-training");
  add_train(s_img, img);
  TrainArgs clip;
  auto* s_clip = app.add_subcommand("pretrain-clip", "stage 2: image-report contrastive alignment");
  add_train(s_clip, clip);
  s_clip->add_option("--init", clip.init, "stage 1 checkpoint to start from")->check(CLI::ExistingDirectory);
  FinetuneArgs ft;
  auto* s_ft = app.add_subcommand("finetune", "fit a task head on a pre-trained backbone");
  add_train(s_ft, ft.base);
  s_ft->add_option("--ckpt", ft.ckpt, "backbone checkpoint")->required()->check(CLI::ExistingDirectory);
  s_ft->add_option("--task", ft.task, "head type")->check(CLI::IsMember({"classification", "cox"}));
  s_ft->add_option("--target", ft.target, "label column for classification");

  ZeroshotArgs zs;
  auto* s_zs = app.add_subcommand("eval-zeroshot", "prompt-ensemble zero-shot classification");
  s_zs->add_option("--prompts", zs.prompts, "prompt JSON")->required()->check(CLI::ExistingFile);
  s_zs->add_option("--embeddings", zs.embeddings, "image embedding CSV")->required()->check(CLI::ExistingFile);
  s_zs->add_option("--labels", zs.labels, "label CSV (id,label)")->required()->check(CLI::ExistingFile);
  s_zs->add_option("--ckpt", zs.ckpt, "stage 2 checkpoint holding the text encoder")->required()->check(CLI::ExistingDirectory);
  s_zs->add_option("--vocab", zs.vocab, "vocabulary file (default: the checkpoint's)")->check(CLI::ExistingFile);
  s_zs->add_option("--strategy", zs.strategy, "ensemble strategy")->check(CLI::IsMember({"max", "stochastic"}));
  s_zs->add_option("--iters", zs.iters, "stochastic iterations")->check(CLI::PositiveNumber);
  s_zs->add_option("--seed", zs.seed, "stochastic seed");

  RetrievalArgs rt;
  auto* s_rt = app.add_subcommand("eval-retrieval", "cross-modal Recall@K");
  s_rt->add_option("--images", rt.images, "image embedding CSV")->required()->check(CLI::ExistingFile);
  s_rt->add_option("--texts", rt.texts, "text embedding CSV")->required()->check(CLI::ExistingFile);
  s_rt->add_option("--k", rt.ks, "comma-separated K values");
  s_rt->add_option("--direction", rt.direction, "retrieval direction")->check(CLI::IsMember({"i2t", "t2i", "both"}));

  SurvivalArgs sv;
  auto* s_sv = app.add_subcommand("eval-survival", "survival analyses on a cohort CSV");
  s_sv->add_option("--in", sv.in, "cohort CSV (id,time,event,score[,cov..,group])")->required()->check(CLI::ExistingFile);
  s_sv->add_option("--analysis", sv.analysis, "analysis")
      ->check(CLI::IsMember({"km", "logrank", "cox", "cindex", "td-auc", "brier"}));
  s_sv->add_option("--group", sv.group, "two-valued group column (default: median split of score)");
  s_sv->add_option("--times", sv.times, "comma-separated evaluation times");
  s_sv->add_option("--tau", sv.tau, "truncation time for the IPCW C-index");
  s_sv->add_option("--covariates", sv.covariates, "comma-separated covariate columns (default: cov*)");
  s_sv->add_option("--train", sv.train, "cohort CSV for the censoring distribution")->check(CLI::ExistingFile);

  ClfArgs cl;
  auto* s_cl = app.add_subcommand("eval-clf", "binary classification metrics with bootstrap CIs");
  s_cl->add_option("--in", cl.in, "CSV (id,score,label)")->required()->check(CLI::ExistingFile);
  s_cl->add_option("--metric", cl.metric, "metric")->check(CLI::IsMember({"auc", "prauc", "youden"}));
  s_cl->add_option("--bootstrap", cl.bootstrap, "resamples (0 disables the CI)");
  s_cl->add_option("--seed", cl.seed, "bootstrap seed");

  TextArgs tx;
  auto* s_tx = app.add_subcommand("eval-text", "report generation metrics");
  s_tx->add_option("--in", tx.in, "JSONL {id,candidate,reference}")->required()->check(CLI::ExistingFile);
  s_tx->add_option("--metric", tx.metric, "metric")
      ->check(CLI::IsMember({"all", "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge-l"}));

  FuseArgs fu;
  auto* s_fu = app.add_subcommand("fuse", "late fusion of per-phase logits");
  s_fu->add_option("--in", fu.in, "CSV (id,phase,l0,l1,..)")->required()->check(CLI::ExistingFile);
  s_fu->add_option("--labels", fu.labels, "label CSV (id,label)")->required()->check(CLI::ExistingFile);
  s_fu->add_option("--phases", fu.phases, "phase letters to fuse (default: ablation over A, AV, AVN, AVND)");
  s_fu->add_option("--out", fu.out, "fused score CSV");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* where = &app;
    for (const auto* s : app.get_subcommands()) where = s;
    err << where->help();
    return kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  parallel::set_threads(parallel::configure_threads(threads));
  auto count_set = [&](const char* name) { return sub->get_option_no_throw(name) && sub->count(name) > 0; };
  for (TrainArgs* t : {&img, &clip, &ft.base}) {
    t->epochs_set = count_set("--epochs");
    t->seed_set = count_set("--seed");
  }

  try {
    Report r;
    if (command == "prep") r = cmd_prep(prep);
    else if (command == "synth") r = cmd_synth(syn);
    else if (command == "pretrain-image") r = cmd_pretrain_image(img);
    else if (command == "pretrain-clip") r = cmd_pretrain_clip(clip);
    else if (command == "finetune") r = cmd_finetune(ft);
    else if (command == "eval-zeroshot") r = cmd_eval_zeroshot(zs);
    else if (command == "eval-retrieval") r = cmd_eval_retrieval(rt);
    else if (command == "eval-survival") r = cmd_eval_survival(sv);
    else if (command == "eval-clf") r = cmd_eval_clf(cl);
    else if (command == "eval-text") r = cmd_eval_text(tx);
    else r = cmd_fuse(fu);

    r.manifest.command = command;
    json flags = json::object();
    for (const auto* opt : sub->get_options())
      if (opt->count() > 0 && opt->get_name() != "--help") flags[opt->get_name()] = opt->as<std::string>();
    r.manifest.args = flags;
    const json manifest = r.manifest.to_json();
    // Output directories carry their manifest; single files get a sidecar.
    std::set<fs::path> dirs;
    for (const auto& o : r.manifest.outputs)
      if (fs::is_directory(o)) dirs.insert(fs::weakly_canonical(o));
    for (const auto& o : r.manifest.outputs) {
      if (fs::is_directory(o))
        io::write_json(join(o, "run_manifest.json"), manifest);
      else if (!dirs.count(fs::weakly_canonical(o).parent_path()))
        io::write_json(o + ".manifest.json", manifest);
    }
    out << json{{"version", kReportVersion}, {"command", command}, {"result", r.result}, {"manifest", manifest}}.dump(2)
        << '\n';
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  } catch (const UndefinedMetric& e) {
    out << error_json(command, "undefined_metric", e.what()).dump(2) << '\n';
  } catch (const ConvergenceError& e) {
    out << error_json(command, "convergence_error", e.what()).dump(2) << '\n';
  } catch (const DataError& e) {
    out << error_json(command, "data_error", e.what()).dump(2) << '\n';
  } catch (const StateError& e) {
    out << error_json(command, "state_error", e.what()).dump(2) << '\n';
  } catch (const volume::NoForeground& e) {
    out << error_json(command, "no_foreground", e.what()).dump(2) << '\n';
  } catch (const std::invalid_argument& e) {
    out << error_json(command, "invalid_input", e.what()).dump(2) << '\n';
  } catch (const nlohmann::json::exception& e) {
    out << error_json(command, "data_error", e.what()).dump(2) << '\n';
  } catch (const std::exception& e) {
    out << error_json(command, "internal_error", e.what()).dump(2) << '\n';
  }
  err << "error: see the error object on standard output\n";
  return kExitDataError;
}

}  // namespace oncoclip::cli
