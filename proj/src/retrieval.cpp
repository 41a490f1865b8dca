#include "oncoclip/retrieval.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "oncoclip/kernels.hpp"
#include "oncoclip/parallel.hpp"

namespace oncoclip::retrieval {

std::string to_string(Direction d) { return d == Direction::i2t ? "i2t" : "t2i"; }

Direction direction_from_string(const std::string& s) {
  if (s == "i2t") return Direction::i2t;
  if (s == "t2i") return Direction::t2i;
  throw std::invalid_argument("unknown retrieval direction '" + s + "' (expected i2t or t2i)");
}

Matrix similarity_matrix(const Matrix& u, const Matrix& v) {
  if (u.cols != v.cols) throw std::invalid_argument("similarity_matrix: embedding dimensions differ");
  if (u.rows == 0 || v.rows == 0) throw std::invalid_argument("similarity_matrix: empty embedding matrix");
  for (double x : u.data)
    if (!std::isfinite(x)) throw std::invalid_argument("similarity_matrix: non-finite embedding");
  for (double x : v.data)
    if (!std::isfinite(x)) throw std::invalid_argument("similarity_matrix: non-finite embedding");
  auto zero_row = [](const Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i)
      if (dot(m.row(i), m.row(i)) == 0.0) return true;
    return false;
  };
  if (zero_row(u) || zero_row(v)) throw std::invalid_argument("similarity_matrix: zero embedding row");
  return kernels::cosine_matrix(u, v);
}

std::size_t partner_rank(const Matrix& s, std::size_t query, Direction d) {
  const std::size_t n = s.rows;
  const double target = s(query, query);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double x = d == Direction::i2t ? s(query, j) : s(j, query);
    if (x > target || (x == target && j < query)) ++rank;
  }
  return rank;
}

double recall_at_k(const Matrix& s, std::size_t k, Direction d) {
  if (s.rows != s.cols) throw std::invalid_argument("recall_at_k: similarity matrix must be square");
  if (s.rows == 0) throw std::invalid_argument("recall_at_k: empty similarity matrix");
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (k > s.rows) throw std::invalid_argument("recall_at_k: k exceeds the number of candidates");
  std::vector<unsigned char> hit(s.rows, 0);
  parallel::for_each_index(s.rows, [&](std::size_t q) { hit[q] = partner_rank(s, q, d) < k ? 1 : 0; });
  std::size_t hits = 0;
  for (auto h : hit) hits += h;
  return static_cast<double>(hits) / static_cast<double>(s.rows);
}

}  // namespace oncoclip::retrieval
