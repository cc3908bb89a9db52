// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: a little-endian uint32 manifest length, a JSON
// manifest (model config plus tensor names/shapes/byte offsets), then the
// tensor payloads as little-endian f32. Round-trips are bit-exact.
#pragma once

#include <string>

#include "mrssm/model.hpp"

namespace mrssm {

void save_checkpoint(const std::string& path, const Mrssm& model);
Mrssm load_checkpoint(const std::string& path);

// Config <-> JSON text helpers shared with the run-config machinery.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace mrssm
