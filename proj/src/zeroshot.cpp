#include "oncoclip/zeroshot.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "oncoclip/clfmetrics.hpp"
#include "oncoclip/error.hpp"
#include "oncoclip/parallel.hpp"
#include "oncoclip/random.hpp"
#include "oncoclip/textmetrics.hpp"

namespace oncoclip::zeroshot {

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

void check_embedded(const PromptSet& ps, std::size_t dim) {
  if (!ps.embedded()) throw std::invalid_argument("zero-shot: prompts have not been embedded");
  if (ps.classes() < 2) throw std::invalid_argument("zero-shot: need at least two classes");
  for (const auto& e : ps.embeddings) {
    if (e.rows == 0) throw std::invalid_argument("zero-shot: class without prompts");
    if (e.cols != dim) throw std::invalid_argument("zero-shot: prompt and image embedding widths differ");
  }
}

void check_image(std::span<const double> u) {
  double nn = 0.0;
  for (double v : u) {
    if (!std::isfinite(v)) throw DataError("zero-shot: non-finite image embedding");
    nn += v * v;
  }
  if (nn == 0.0) throw DataError("zero-shot: zero image embedding");
}

}  // namespace

PromptSet expand_prompts(const std::vector<std::string>& templates, const std::vector<std::string>& class_names,
                         const std::vector<std::vector<std::string>>& descriptors) {
  if (templates.empty()) throw std::invalid_argument("expand_prompts: no templates");
  if (class_names.size() != descriptors.size()) throw std::invalid_argument("expand_prompts: class/descriptor count mismatch");
  for (const auto& t : templates) {
    const auto at = t.find("{}");
    if (at == std::string::npos || t.find("{}", at + 2) != std::string::npos)
      throw std::invalid_argument("expand_prompts: template must contain exactly one {} slot: '" + t + "'");
  }
  PromptSet ps{templates, class_names, descriptors, {}, {}};
  for (const auto& ds : descriptors) {
    if (ds.empty()) throw std::invalid_argument("expand_prompts: class without descriptors");
    std::vector<std::string> out;
    for (const auto& t : templates) {
      const auto at = t.find("{}");
      for (const auto& d : ds) out.push_back(t.substr(0, at) + d + t.substr(at + 2));
    }
    ps.expanded.push_back(std::move(out));
  }
  return ps;
}

PromptSet load_prompts(const nlohmann::ordered_json& j) {
  if (!j.is_object() || !j.contains("templates") || !j.contains("classes") || !j["classes"].is_object())
    throw DataError("prompt file must be an object with 'templates' and 'classes'");
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> desc;
  for (const auto& [name, list] : j["classes"].items()) {
    names.push_back(name);
    desc.push_back(list.get<std::vector<std::string>>());
  }
  try {
    return expand_prompts(j["templates"].get<std::vector<std::string>>(), names, desc);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

PromptSet load_prompts_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prompt file " + path);
  try {
    return load_prompts(nlohmann::ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed prompt file " + path + ": " + e.what());
  }
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (!index_.emplace(words_[i], static_cast<std::uint32_t>(i)).second)
      throw DataError("vocabulary: duplicate word '" + words_[i] + "'");
}

Vocabulary Vocabulary::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path);
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

std::vector<std::uint32_t> Vocabulary::encode(const std::string& s) const {
  std::vector<std::uint32_t> ids;
  for (const auto& w : text::tokenize(s))
    if (auto it = index_.find(w); it != index_.end()) ids.push_back(it->second);
  return ids;
}

void embed_prompts(PromptSet& ps, const nn::TextEncoder& text, const Vocabulary& vocab) {
  if (vocab.size() > text.vocab()) throw std::invalid_argument("embed_prompts: vocabulary larger than the token table");
  std::vector<Matrix> out;
  for (const auto& prompts : ps.expanded) {
    Matrix m(prompts.size(), text.dim());
    for (std::size_t k = 0; k < prompts.size(); ++k) {
      const auto ids = vocab.encode(prompts[k]);
      if (ids.empty()) throw DataError("prompt has no in-vocabulary token: '" + prompts[k] + "'");
      const auto e = nn::l2_normalize(nn::forward_text(text, ids, nullptr));
      std::copy(e.begin(), e.end(), m.row(k).begin());
    }
    out.push_back(std::move(m));
  }
  ps.embeddings = std::move(out);
}

ZsResult zs_max_similarity(std::span<const double> u, const PromptSet& ps) {
  check_embedded(ps, u.size());
  check_image(u);
  ZsResult r;
  for (const auto& e : ps.embeddings) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < e.rows; ++k) best = std::max(best, cosine(u, e.row(k)));
    r.logits.push_back(best);
  }
  for (std::size_t c = 1; c < r.logits.size(); ++c)
    if (r.logits[c] > r.logits[r.predicted]) r.predicted = c;
  r.score = r.logits.size() == 2 ? r.logits[1] - r.logits[0] : std::numeric_limits<double>::quiet_NaN();
  return r;
}

std::vector<ZsResult> zs_max_similarity(const Matrix& images, const PromptSet& ps) {
  std::vector<ZsResult> out(images.rows);
  parallel::for_each_index(images.rows, [&](std::size_t i) { out[i] = zs_max_similarity(images.row(i), ps); });
  return out;
}

std::vector<double> zs_scores(const std::vector<ZsResult>& results) {
  std::vector<double> s;
  s.reserve(results.size());
  for (const auto& r : results) s.push_back(r.score);
  return s;
}

StochasticResult zs_stochastic(const Matrix& images, std::span<const int> labels, const PromptSet& ps,
                               std::size_t iterations, std::uint64_t seed) {
  if (iterations == 0) throw std::invalid_argument("zs_stochastic: need at least one iteration");
  if (ps.classes() != 2) throw std::invalid_argument("zs_stochastic: binary tasks only");
  check_embedded(ps, images.cols);
  if (labels.size() != images.rows) throw std::invalid_argument("zs_stochastic: labels do not match images");
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("zs_stochastic: labels must be 0/1");
  for (std::size_t i = 0; i < images.rows; ++i) check_image(images.row(i));

  // Precompute every image-prompt cosine once.
  std::vector<Matrix> sims;
  for (const auto& e : ps.embeddings) {
    Matrix s(images.rows, e.rows);
    for (std::size_t i = 0; i < images.rows; ++i)
      for (std::size_t k = 0; k < e.rows; ++k) s(i, k) = cosine(images.row(i), e.row(k));
    sims.push_back(std::move(s));
  }

  StochasticResult r;
  r.seed = seed;
  r.aucs.resize(iterations);
  parallel::for_each_index(iterations, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    const std::size_t neg = rng.below(sims[0].cols);
    const std::size_t pos = rng.below(sims[1].cols);
    std::vector<double> score(images.rows);
    for (std::size_t i = 0; i < images.rows; ++i) score[i] = sims[1](i, pos) - sims[0](i, neg);
    r.aucs[b] = metrics::roc_auc(score, labels);
  });
  double sum = 0.0;
  for (double a : r.aucs) sum += a;
  r.mean = sum / static_cast<double>(iterations);
  r.lo = metrics::percentile(r.aucs, 0.025);
  r.hi = metrics::percentile(r.aucs, 0.975);
  return r;
}

}  // namespace oncoclip::zeroshot
