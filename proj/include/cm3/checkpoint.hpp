#pragma once

// Versioned checkpoint container: named shape-tagged arrays per net, plus
// stage and augmentation-layer tags. A Stage-2 net accepts a Stage-1
// checkpoint as a partial restore (main-path arrays only).

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cm3/net.hpp"

namespace cm3 {

using Json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

inline Json net_to_json(const AugmentableNet& net) {
  Json arrays = Json::object();
  for (const auto& e : net.registry) {
    arrays[e.name] = {
        {"shape", e.shape},
        {"data", std::vector<double>(net.params.begin() + e.offset,
                                     net.params.begin() + e.offset + e.count())}};
  }
  return {{"stage", net.stage == Stage::One ? 1 : 2},
          {"augment_index", net.augment_index},
          {"arrays", std::move(arrays)}};
}

/// Copies arrays by name into the net. Every array in the payload must
/// match a registry entry exactly; entries absent from the payload are an
/// error unless allow_partial (the Stage-2-from-Stage-1 restore path).
inline void net_from_json(AugmentableNet& net, const Json& j, bool allow_partial = false) {
  const Json& arrays = j.at("arrays");
  size_t loaded = 0;
  for (const auto& e : net.registry) {
    auto it = arrays.find(e.name);
    if (it == arrays.end()) {
      if (!allow_partial)
        throw std::runtime_error("checkpoint: missing array " + e.name);
      continue;
    }
    std::vector<int> shape = (*it).at("shape").get<std::vector<int>>();
    if (shape != e.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + e.name);
    std::vector<double> data = (*it).at("data").get<std::vector<double>>();
    if (data.size() != e.count())
      throw std::runtime_error("checkpoint: size mismatch for " + e.name);
    std::copy(data.begin(), data.end(), net.params.begin() + e.offset);
    ++loaded;
  }
  if (loaded != arrays.size())
    throw std::runtime_error("checkpoint: payload contains arrays unknown to this net");
}

struct CheckpointMeta {
  int stage = 1;
  std::string method;
  std::string env;
  uint64_t seed = 0;
};

inline Json make_checkpoint(const CheckpointMeta& meta,
                            const std::vector<std::pair<std::string, const AugmentableNet*>>& nets) {
  Json j;
  j["format"] = "cm3-checkpoint";
  j["version"] = kCheckpointVersion;
  j["stage"] = meta.stage;
  j["method"] = meta.method;
  j["env"] = meta.env;
  j["seed"] = meta.seed;
  Json n = Json::object();
  for (const auto& [name, net] : nets) n[name] = net_to_json(*net);
  j["nets"] = std::move(n);
  return j;
}

inline void write_json_atomic(const std::string& path, const Json& j) {
  std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << j.dump();
  }
  std::filesystem::rename(tmp, target);
}

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                            const std::vector<std::pair<std::string, const AugmentableNet*>>& nets) {
  write_json_atomic(path, make_checkpoint(meta, nets));
}

inline Json read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  Json j = Json::parse(in);
  if (j.value("format", "") != "cm3-checkpoint")
    throw std::runtime_error("not a cm3 checkpoint: " + path);
  if (j.value("version", 0) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  return j;
}

/// Restores one net from a checkpoint payload. A Stage-2 net restoring
/// from a Stage-1 payload loads the shared prefix and keeps its own side
/// branch and bridge parameters.
inline void load_net(AugmentableNet& net, const Json& checkpoint, const std::string& name) {
  const Json& nets = checkpoint.at("nets");
  auto it = nets.find(name);
  if (it == nets.end()) throw std::runtime_error("checkpoint has no net named " + name);
  int file_stage = (*it).value("stage", 1);
  bool partial = net.stage == Stage::Two && file_stage == 1;
  if (net.stage == Stage::One && file_stage == 2)
    throw std::runtime_error("cannot load a Stage-2 net into a Stage-1 architecture");
  net_from_json(net, *it, partial);
}

}  // namespace cm3
