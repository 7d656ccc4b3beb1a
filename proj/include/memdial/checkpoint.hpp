#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "memdial/config_json.hpp"
#include "memdial/model.hpp"
#include "memdial/objective.hpp"

namespace memdial {

/// Checkpoint container "MDCK", version 1:
///   magic[4] | u32 version | u64 header_len | header JSON | raw f64 data
/// The header lists tensor names/shapes in layout order; tensor payloads
/// follow back to back as little-endian doubles. Round-trips bit-exactly.
struct Checkpoint {
  ModelConfig model;
  DialConfig dial;
  std::uint64_t seed = 0;
  Parameters params;
};

inline void save_checkpoint(const std::string& path, const ModelConfig& model_cfg,
                            const DialConfig& dial_cfg, std::uint64_t seed,
                            const Parameters& params) {
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    tensors.push_back({{"name", params.names[i]}, {"shape", params.tensors[i].shape}});
  }
  nlohmann::json header{{"format", "MDCK"},
                        {"model", to_json(model_cfg)},
                        {"dial", to_json(dial_cfg)},
                        {"seed", seed},
                        {"tensors", tensors}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out.write("MDCK", 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t hl = hs.size();
  out.write(reinterpret_cast<const char*>(&hl), sizeof(hl));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Tensor& t : params.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MDCK", 4) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  std::uint64_t hl = 0;
  in.read(reinterpret_cast<char*>(&hl), sizeof(hl));
  std::string hs(hl, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hl));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(hs);

  Checkpoint ck;
  ck.model = model_config_from_json(header.at("model"));
  ck.dial = dial_config_from_json(header.at("dial"));
  ck.seed = header.value("seed", std::uint64_t{0});
  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
    Tensor& t = ck.params.add(name, shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data");
  return ck;
}

}  // namespace memdial
