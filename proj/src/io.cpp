#include "oncoclip/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "oncoclip/error.hpp"

namespace oncoclip::io {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    std::string field = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto b = field.find_first_not_of(" \t");
    const auto e = field.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw DataError(where + ": not a number: '" + s + "'");
  return v;
}

}  // namespace

std::optional<std::size_t> CsvTable::find(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

std::size_t CsvTable::column(const std::string& name) const {
  if (auto c = find(name)) return *c;
  throw DataError(source + ": missing column '" + name + "'");
}

std::vector<std::string> CsvTable::strings(std::size_t col) const {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[col]);
  return out;
}

std::vector<double> CsvTable::numbers(std::size_t col) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double v = parse_double(rows[i][col], source + " row " + std::to_string(i + 2) + " column " + header[col]);
    if (!std::isfinite(v))
      throw DataError(source + " row " + std::to_string(i + 2) + ": non-finite value in column " + header[col]);
    out.push_back(v);
  }
  return out;
}

std::vector<int> CsvTable::integers(std::size_t col) const {
  std::vector<int> out;
  for (double v : numbers(col)) {
    if (v != std::floor(v)) throw DataError(source + ": column " + header[col] + " must hold integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<int> CsvTable::binary(std::size_t col) const {
  auto v = integers(col);
  for (int x : v)
    if (x != 0 && x != 1) throw DataError(source + ": column " + header[col] + " must be 0/1");
  return v;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  CsvTable t;
  t.source = path;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError(path + " line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw DataError(path + ": empty file");
  return t;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

Embeddings read_embeddings(const std::string& path) {
  const auto t = read_csv(path);
  if (t.header.size() < 2 || t.header[0] != "id") throw DataError(path + ": embedding header must be id,d0,..");
  for (std::size_t k = 1; k < t.header.size(); ++k)
    if (t.header[k] != "d" + std::to_string(k - 1)) throw DataError(path + ": unexpected embedding column " + t.header[k]);
  Embeddings e{t.strings(0), Matrix(t.rows.size(), t.header.size() - 1)};
  for (std::size_t k = 1; k < t.header.size(); ++k) {
    const auto col = t.numbers(k);
    for (std::size_t i = 0; i < col.size(); ++i) e.values(i, k - 1) = col[i];
  }
  return e;
}

void write_embeddings(const std::string& path, const Embeddings& e) {
  std::vector<std::string> header{"id"};
  for (std::size_t k = 0; k < e.values.cols; ++k) header.push_back("d" + std::to_string(k));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < e.values.rows; ++i) {
    std::vector<std::string> r{e.ids[i]};
    for (double v : e.values.row(i)) r.push_back(format_double(v));
    rows.push_back(std::move(r));
  }
  write_csv(path, header, rows);
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace oncoclip::io
