#include "oncoclip/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "oncoclip/error.hpp"

namespace oncoclip {

void Checkpoint::put(const std::string& name, std::span<const double> values) {
  for (auto& [n, v] : tensors)
    if (n == name) {
      v.assign(values.begin(), values.end());
      return;
    }
  tensors.emplace_back(name, std::vector<double>(values.begin(), values.end()));
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& t) { return t.first == name; });
}

const std::vector<double>& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return v;
  throw DataError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"format", "oncoclip-checkpoint-1"}, {"meta", ckpt.meta}, {"blob", "params.bin"}};
  auto list = nlohmann::json::array();
  std::size_t offset = 0;
  std::ofstream blob(dir + "/params.bin", std::ios::binary);
  if (!blob) throw DataError("cannot write checkpoint blob in " + dir);
  for (const auto& [name, values] : ckpt.tensors) {
    list.push_back({{"name", name}, {"count", values.size()}, {"offset", offset}});
    blob.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    offset += values.size();
  }
  manifest["tensors"] = std::move(list);
  std::ofstream m(dir + "/manifest.json");
  m << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream m(dir + "/manifest.json");
  if (!m) throw DataError("no checkpoint manifest in " + dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "oncoclip-checkpoint-1") throw DataError("unknown checkpoint format in " + dir);
  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  std::ifstream blob(dir + "/" + manifest.value("blob", "params.bin"), std::ios::binary);
  if (!blob) throw DataError("missing checkpoint blob in " + dir);
  for (const auto& t : manifest.at("tensors")) {
    std::vector<double> values(t.at("count").get<std::size_t>());
    blob.seekg(static_cast<std::streamoff>(t.at("offset").get<std::size_t>() * sizeof(double)));
    blob.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (static_cast<std::size_t>(blob.gcount()) != values.size() * sizeof(double))
      throw DataError("truncated checkpoint blob in " + dir);
    ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(values));
  }
  return ckpt;
}

}  // namespace oncoclip
