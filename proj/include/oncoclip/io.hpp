#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oncoclip/linalg.hpp"

namespace oncoclip::io {

// Plain comma-separated table with a header row. No quoting: fields may not
// contain commas or newlines.
struct CsvTable {
  std::string source;  // file name, for error messages
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t column(const std::string& name) const;  // DataError when absent
  std::vector<std::string> strings(std::size_t col) const;
  std::vector<double> numbers(std::size_t col) const;
  std::vector<int> integers(std::size_t col) const;
  std::vector<int> binary(std::size_t col) const;  // 0/1 only
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Shortest decimal that round-trips.
std::string format_double(double v);

// Embedding CSV: `id,d0,..,d{D-1}`.
struct Embeddings {
  std::vector<std::string> ids;
  Matrix values;
};

Embeddings read_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const Embeddings& e);

std::vector<nlohmann::json> read_jsonl(const std::string& path);
nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace oncoclip::io
