#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace oncoclip {

// Named f64 tensors plus free-form metadata. On disk: `manifest.json`
// (metadata, tensor names, counts and offsets) and `params.bin` (raw
// little-endian doubles in manifest order).
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<double>>> tensors;

  void put(const std::string& name, std::span<const double> values);
  bool has(const std::string& name) const;
  const std::vector<double>& get(const std::string& name) const;
};

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace oncoclip
