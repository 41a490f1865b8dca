#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "oncoclip/encoders.hpp"
#include "oncoclip/linalg.hpp"

namespace oncoclip::zeroshot {

// Classes keep their file order; for binary tasks index 1 is the positive class.
struct PromptSet {
  std::vector<std::string> templates;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::string>> descriptors;  // per class
  std::vector<std::vector<std::string>> expanded;     // per class, template-major
  std::vector<Matrix> embeddings;                     // per class, one unit row per prompt; empty until embedded

  std::size_t classes() const { return class_names.size(); }
  bool embedded() const { return !embeddings.empty(); }
};

// Substitutes every descriptor into every template's single `{}` slot.
PromptSet expand_prompts(const std::vector<std::string>& templates, const std::vector<std::string>& class_names,
                         const std::vector<std::vector<std::string>>& descriptors);

// {"templates": [...], "classes": {"name": [descriptors], ...}}
PromptSet load_prompts(const nlohmann::ordered_json& j);
PromptSet load_prompts_file(const std::string& path);

// Word -> token id, one word per line (line number = id).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);
  static Vocabulary from_file(const std::string& path);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  // Tokenizes with text::tokenize; out-of-vocabulary words are skipped.
  std::vector<std::uint32_t> encode(const std::string& s) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// Fills ps.embeddings with L2-normalised mean-pooled token embeddings.
// Throws DataError for a prompt without any in-vocabulary token.
void embed_prompts(PromptSet& ps, const nn::TextEncoder& text, const Vocabulary& vocab);

struct ZsResult {
  std::vector<double> logits;  // s_c = max_k cos(u, v_ck)
  std::size_t predicted = 0;   // argmax, ties to the lower index
  double score = 0.0;          // s_1 - s_0 for binary tasks, NaN otherwise
};

ZsResult zs_max_similarity(std::span<const double> u, const PromptSet& ps);
std::vector<ZsResult> zs_max_similarity(const Matrix& images, const PromptSet& ps);
std::vector<double> zs_scores(const std::vector<ZsResult>& results);

struct StochasticResult {
  double mean = 0.0;
  double lo = 0.0;  // 2.5th percentile
  double hi = 0.0;  // 97.5th percentile
  std::vector<double> aucs;
  std::uint64_t seed = 0;
};

// Each iteration draws one prompt per class uniformly and scores every image
// by cos(u, v_pos) - cos(u, v_neg). Binary only.
StochasticResult zs_stochastic(const Matrix& images, std::span<const int> labels, const PromptSet& ps,
                               std::size_t iterations = 1000, std::uint64_t seed = 0);

}  // namespace oncoclip::zeroshot
