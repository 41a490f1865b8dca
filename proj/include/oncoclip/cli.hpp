#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace oncoclip::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

// Everything needed to reproduce a run: same manifest, same outputs.
struct RunManifest {
  std::string command;
  nlohmann::json args = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
  nlohmann::json metric_definitions = nlohmann::json::object();
  std::vector<std::string> outputs;

  void add_input(const std::string& path);
  std::string config_hash() const;
  nlohmann::json to_json() const;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

// Runs one subcommand. args excludes the program name. The JSON report (or
// error object) goes to `out`, diagnostics and usage text to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace oncoclip::cli
