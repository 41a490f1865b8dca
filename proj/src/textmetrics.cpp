#include "oncoclip/textmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>

namespace oncoclip::text {

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const Tokens& t, std::size_t k) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (t.size() < k) return counts;
  for (std::size_t i = 0; i + k <= t.size(); ++i) ++counts[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + k))];
  return counts;
}

struct Link {
  std::size_t c;
  std::size_t r;
};

std::size_t count_chunks(std::vector<Link> links) {
  if (links.empty()) return 0;
  std::sort(links.begin(), links.end(), [](const Link& a, const Link& b) { return a.c < b.c; });
  std::size_t chunks = 1;
  for (std::size_t k = 1; k < links.size(); ++k)
    if (links[k].c != links[k - 1].c + 1 || links[k].r != links[k - 1].r + 1) ++chunks;
  return chunks;
}

// Exhaustive search for the fewest chunks among maximum-match alignments.
class ChunkSearch {
 public:
  ChunkSearch(const Tokens& cand, const Tokens& ref) : cand_(cand), ref_(ref), used_(ref.size(), false) {
    for (const auto& w : cand) ++cand_left_[w];
    std::map<std::string, std::size_t> rc;
    for (const auto& w : ref) ++rc[w];
    for (const auto& [w, n] : cand_left_) {
      const auto it = rc.find(w);
      if (it != rc.end()) need_[w] = std::min(n, it->second);
    }
  }

  std::size_t max_matches() const {
    std::size_t m = 0;
    for (const auto& [w, n] : need_) m += n;
    return m;
  }

  // Returns false when the node budget ran out before the search finished.
  bool run(std::size_t budget) {
    budget_ = budget;
    dfs(0, 0);
    return !exhausted_;
  }

  std::size_t best() const { return best_; }

 private:
  void dfs(std::size_t i, std::size_t chunks) {
    if (exhausted_) return;
    if (++nodes_ > budget_) {
      exhausted_ = true;
      return;
    }
    if (chunks >= best_) return;
    if (i == cand_.size()) {
      best_ = chunks;
      return;
    }
    const std::string& w = cand_[i];
    auto need = need_.find(w);
    const std::size_t left_after = --cand_left_[w];
    const bool extends = !path_.empty() && path_.back().c + 1 == i;
    if (need != need_.end() && need->second > 0) {
      // Try the continuation of the current chunk first, then every other
      // reference position carrying the same word.
      auto try_ref = [&](std::size_t j) {
        used_[j] = true;
        --need->second;
        const bool cont = extends && path_.back().r + 1 == j;
        path_.push_back({i, j});
        dfs(i + 1, chunks + (cont ? 0 : 1));
        path_.pop_back();
        ++need->second;
        used_[j] = false;
      };
      std::size_t preferred = ref_.size();
      if (extends) {
        const std::size_t j = path_.back().r + 1;
        if (j < ref_.size() && !used_[j] && ref_[j] == w) {
          preferred = j;
          try_ref(j);
        }
      }
      for (std::size_t j = 0; j < ref_.size(); ++j)
        if (j != preferred && !used_[j] && ref_[j] == w) try_ref(j);
      // Skipping is allowed only if enough later occurrences remain.
      if (left_after >= need->second) dfs(i + 1, chunks);
    } else {
      dfs(i + 1, chunks);
    }
    ++cand_left_[w];
  }

  const Tokens& cand_;
  const Tokens& ref_;
  std::vector<bool> used_;
  std::map<std::string, std::size_t> cand_left_;
  std::map<std::string, std::size_t> need_;
  std::vector<Link> path_;
  std::size_t best_ = static_cast<std::size_t>(-1);
  std::size_t nodes_ = 0;
  std::size_t budget_ = 0;
  bool exhausted_ = false;
};

// Repeatedly aligns the longest common run of unused tokens. Reaches the
// maximum match count but not necessarily the minimum number of chunks.
std::size_t greedy_chunks(const Tokens& cand, const Tokens& ref) {
  std::vector<bool> cu(cand.size(), false), ru(ref.size(), false);
  std::vector<Link> links;
  while (true) {
    std::size_t best_len = 0, bi = 0, bj = 0;
    for (std::size_t i = 0; i < cand.size(); ++i)
      for (std::size_t j = 0; j < ref.size(); ++j) {
        std::size_t len = 0;
        while (i + len < cand.size() && j + len < ref.size() && !cu[i + len] && !ru[j + len] &&
               cand[i + len] == ref[j + len])
          ++len;
        if (len > best_len) best_len = len, bi = i, bj = j;
      }
    if (best_len == 0) break;
    for (std::size_t k = 0; k < best_len; ++k) {
      cu[bi + k] = ru[bj + k] = true;
      links.push_back({bi + k, bj + k});
    }
  }
  return count_chunks(links);
}

constexpr std::size_t kSearchBudget = 2'000'000;

}  // namespace

BleuResult bleu(const std::vector<TokenPair>& pairs, std::size_t n) {
  if (n == 0) throw std::invalid_argument("bleu: order must be >= 1");
  if (pairs.empty()) throw std::invalid_argument("bleu: no pairs");
  BleuResult out;
  std::vector<double> matched(n, 0.0), total(n, 0.0);
  for (const auto& p : pairs) {
    if (p.candidate.empty()) out.empty_candidate = true;
    out.candidate_length += p.candidate.size();
    out.reference_length += p.reference.size();
    for (std::size_t k = 1; k <= n; ++k) {
      const auto cc = ngram_counts(p.candidate, k);
      const auto rc = ngram_counts(p.reference, k);
      for (const auto& [g, c] : cc) {
        total[k - 1] += static_cast<double>(c);
        const auto it = rc.find(g);
        if (it != rc.end()) matched[k - 1] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (out.candidate_length == 0) {
    out.precisions.assign(n, 0.0);
    out.brevity_penalty = 0.0;
    return out;
  }
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double num = matched[k] > 0.0 ? matched[k] : kBleuEpsilon;
    const double p = total[k] > 0.0 ? num / total[k] : kBleuEpsilon;
    out.precisions.push_back(p);
    log_sum += std::log(p);
  }
  const auto c = static_cast<double>(out.candidate_length), r = static_cast<double>(out.reference_length);
  out.brevity_penalty = c < r ? std::exp(1.0 - r / c) : 1.0;
  out.score = out.brevity_penalty * std::exp(log_sum / static_cast<double>(n));
  return out;
}

MeteorResult meteor_lite(const TokenPair& pair) {
  if (pair.reference.empty()) throw std::invalid_argument("meteor_lite: empty reference");
  MeteorResult out;
  if (pair.candidate.empty()) return out;
  ChunkSearch search(pair.candidate, pair.reference);
  out.matches = search.max_matches();
  if (out.matches == 0) return out;
  out.chunks = search.run(kSearchBudget) ? search.best() : greedy_chunks(pair.candidate, pair.reference);
  const auto m = static_cast<double>(out.matches);
  out.precision = m / static_cast<double>(pair.candidate.size());
  out.recall = m / static_cast<double>(pair.reference.size());
  out.fmean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
  const double frag = static_cast<double>(out.chunks) / m;
  out.penalty = 0.5 * frag * frag * frag;
  out.score = out.fmean * (1.0 - out.penalty);
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeResult rouge_l(const TokenPair& pair) {
  if (pair.reference.empty()) throw std::invalid_argument("rouge_l: empty reference");
  RougeResult out;
  if (pair.candidate.empty()) return out;
  out.lcs = lcs_length(pair.candidate, pair.reference);
  if (out.lcs == 0) return out;
  const auto l = static_cast<double>(out.lcs);
  out.precision = l / static_cast<double>(pair.candidate.size());
  out.recall = l / static_cast<double>(pair.reference.size());
  out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

}  // namespace oncoclip::text
