#pragma once

#include <cstddef>
#include <string>

#include "oncoclip/linalg.hpp"

namespace oncoclip::retrieval {

enum class Direction { i2t, t2i };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

// S(i, j) = cosine(u_i, v_j), rows are images, columns texts.
Matrix similarity_matrix(const Matrix& u, const Matrix& v);

// Rank (0-based) of the true partner of `query` among the candidates: the
// number of candidates scoring strictly higher plus the number of lower-index
// candidates scoring equal.
std::size_t partner_rank(const Matrix& s, std::size_t query, Direction d);

// Fraction of queries whose partner (the diagonal entry) ranks in the top k.
double recall_at_k(const Matrix& s, std::size_t k, Direction d);

}  // namespace oncoclip::retrieval
