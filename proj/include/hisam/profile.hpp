// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace hisam {

/// Sizes shared by every module. All downstream feature shapes are derived
/// from these fields, so two profiles with equal fields build identical
/// parameter shapes.
struct ScaleProfile {
    std::string name = "desk";

    int input_size = 256;
    int patch_size = 16;
    int embed_dim = 64;          // neck output / decoder width

    int vit_dim = 64;
    int vit_depth = 4;
    int vit_heads = 4;
    int vit_mlp_ratio = 4;
    int vit_window = 0;          // 0 = global attention in every block
    int vit_global_every = 0;    // with windows: every n-th block is global

    int prompt_token_count = 12;
    int n_out = 5;               // 1 IoU token + 4 mask tokens
    int n_p = 2;                 // point token + padding token

    int decoder_heads = 8;
    int decoder_mlp_dim = 256;
    int iou_head_hidden = 64;

    int embed_hw() const { return input_size / patch_size; }
    int lr_mask_size() const { return 4 * embed_hw(); }
    int lr_mask_dim() const { return embed_dim / 8; }
    int hr_mask_size() const { return 4 * lr_mask_size(); }
    int hr_mask_dim() const { return lr_mask_dim() / 2; }
    int word_hr_size() const { return lr_mask_size() * 3 / 2; }
    int adapter_bottleneck() const { return vit_dim / 4; }

    /// Throws ConfigError when the profile cannot build a model.
    void validate() const;

    static ScaleProfile desk();
    static ScaleProfile full();      // ViT-B-like, 1024 input
    static ScaleProfile full_large(); // ViT-L-like, config entry only
    static ScaleProfile by_name(const std::string& name);

    bool operator==(const ScaleProfile&) const = default;
};

void to_json(nlohmann::json& j, const ScaleProfile& p);
void from_json(const nlohmann::json& j, ScaleProfile& p);

} // namespace hisam
