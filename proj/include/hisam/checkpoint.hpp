// SPDX-License-Identifier: Apache-2.0
//
// Single-file checkpoint archive:
//   "HSCK" | u32 format version | u64 manifest bytes | manifest JSON | tensor data
// The manifest lists the profile, model options, module names, the step
// counter and every tensor (name, shape, byte offset). Tensor data is raw
// little-endian float32 in manifest order.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hisam/model.hpp"

namespace hisam {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Archive {
    nlohmann::ordered_json manifest;
    std::map<std::string, torch::Tensor> tensors;
};

void write_archive(const std::filesystem::path& path, nlohmann::ordered_json manifest,
                   const std::vector<std::pair<std::string, torch::Tensor>>& tensors);
/// Throws DataError for unreadable or truncated files.
Archive read_archive(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ModelOptions& o);
void from_json(const nlohmann::json& j, ModelOptions& o);

/// Parameters and buffers under their module paths.
std::vector<std::pair<std::string, torch::Tensor>> model_state(const HiSamImpl& model);

/// Manifest fields describing the model.
nlohmann::ordered_json model_manifest(const HiSamImpl& model);

/// Copy archived tensors into the model. Every model tensor must be present
/// with the recorded shape; otherwise ConfigError names the offender.
void load_model_state(HiSamImpl& model, const Archive& archive);

/// Model-only checkpoint (step counter 0 unless given).
void save_model(const std::filesystem::path& path, const HiSamImpl& model, int64_t step = 0);
/// Build the model described by the manifest and load its weights.
HiSam load_model(const std::filesystem::path& path);
HiSam model_from_archive(const Archive& archive);

} // namespace hisam
