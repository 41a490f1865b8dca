#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace oncoclip::text {

// Lowercases ASCII and returns the maximal alphanumeric runs; everything else
// (whitespace, punctuation) separates tokens and is dropped.
std::vector<std::string> tokenize(std::string_view s);
inline constexpr const char* kTokenizerVersion = "lower-alnum-v1";

using Tokens = std::vector<std::string>;

struct TokenPair {
  Tokens candidate;
  Tokens reference;
};

struct BleuResult {
  double score = 0.0;
  std::vector<double> precisions;  // modified precision per order 1..n
  double brevity_penalty = 1.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  bool empty_candidate = false;  // some candidate had no tokens
};

inline constexpr double kBleuEpsilon = 1e-9;

// Corpus BLEU with uniform weights over orders 1..n. Orders with zero clipped
// matches use kBleuEpsilon in place of the zero numerator.
BleuResult bleu(const std::vector<TokenPair>& pairs, std::size_t n);

struct MeteorResult {
  double score = 0.0;
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
};

// METEOR with exact unigram matching only: the alignment maximises matches,
// then minimises chunks.
MeteorResult meteor_lite(const TokenPair& pair);

struct RougeResult {
  double f1 = 0.0;
  std::size_t lcs = 0;
  double precision = 0.0;
  double recall = 0.0;
};

RougeResult rouge_l(const TokenPair& pair);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

}  // namespace oncoclip::text
