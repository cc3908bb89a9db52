// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mrssm/util.hpp"

namespace mrssm {

using nlohmann::json;

namespace {

json modality_to_json(const ModalitySpec& m) {
  return json{{"name", m.name},
              {"kind", m.kind == ModalityKind::kDense ? "dense" : "image"},
              {"shape", m.shape},
              {"lambda", m.lambda}};
}

ModalitySpec modality_from_json(const json& j) {
  ModalitySpec m;
  m.name = j.at("name").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  check_arg(kind == "dense" || kind == "image", "checkpoint: bad modality kind " + kind);
  m.kind = kind == "dense" ? ModalityKind::kDense : ModalityKind::kImage;
  m.shape = j.at("shape").get<std::vector<int>>();
  m.lambda = j.at("lambda").get<float>();
  return m;
}

json config_to_json_obj(const ModelConfig& cfg) {
  json mods = json::array();
  for (const ModalitySpec& m : cfg.modalities) mods.push_back(modality_to_json(m));
  return json{{"d_h", cfg.d_h},
              {"d_s", cfg.d_s},
              {"d_a", cfg.d_a},
              {"d_embed", cfg.d_embed},
              {"conv_channels", cfg.conv_channels},
              {"fusion", cfg.fusion == FusionMode::kPoe ? "poe" : "concat"},
              {"modalities", mods}};
}

ModelConfig config_from_json_obj(const json& j) {
  ModelConfig cfg;
  cfg.d_h = j.at("d_h").get<int>();
  cfg.d_s = j.at("d_s").get<int>();
  cfg.d_a = j.at("d_a").get<int>();
  cfg.d_embed = j.at("d_embed").get<int>();
  cfg.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  const std::string fusion = j.at("fusion").get<std::string>();
  check_arg(fusion == "poe" || fusion == "concat", "checkpoint: bad fusion mode " + fusion);
  cfg.fusion = fusion == "poe" ? FusionMode::kPoe : FusionMode::kConcat;
  for (const json& m : j.at("modalities")) cfg.modalities.push_back(modality_from_json(m));
  return cfg;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_json_obj(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& json_text) {
  return config_from_json_obj(json::parse(json_text));
}

void save_checkpoint(const std::string& path, const Mrssm& model) {
  json tensors = json::array();
  std::uint64_t offset = 0;  // byte offset into the payload section
  for (const auto& [name, t] : model.params().all()) {
    tensors.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  const json manifest = {{"format", "mrssm-checkpoint"},
                         {"version", 1},
                         {"config", config_to_json_obj(model.config())},
                         {"tensors", tensors}};
  const std::string mtext = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  check_arg(out.good(), "save_checkpoint: cannot open " + path);
  const std::uint32_t mlen = static_cast<std::uint32_t>(mtext.size());
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& [name, t] : model.params().all()) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.numel())));
  }
  check_arg(out.good(), "save_checkpoint: write failed for " + path);
}

Mrssm load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_arg(in.good(), "load_checkpoint: cannot open " + path);
  std::uint32_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  check_arg(in.good(), "load_checkpoint: truncated header in " + path);
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  check_arg(in.good(), "load_checkpoint: truncated manifest in " + path);

  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const json::exception& e) {
    throw std::invalid_argument("load_checkpoint: bad manifest in " + path + ": " + e.what());
  }
  check_arg(manifest.value("format", "") == "mrssm-checkpoint",
            "load_checkpoint: not a checkpoint file: " + path);

  Mrssm model(config_from_json_obj(manifest.at("config")));
  const std::streampos payload_start = in.tellg();
  for (const json& tj : manifest.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = tj.at("offset").get<std::uint64_t>();
    Tensor t(shape);
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.numel())));
    check_arg(in.good(), "load_checkpoint: truncated payload for tensor '" + name + "' in " + path);
    model.params().add(name, std::move(t));
  }
  return model;
}

}  // namespace mrssm
