// SPDX-License-Identifier: Apache-2.0
#include "hisam/profile.hpp"

#include "hisam/errors.hpp"

namespace hisam {

void ScaleProfile::validate() const
{
    auto require = [&](bool ok, const std::string& what) {
        if (!ok)
            throw ConfigError("profile '" + name + "': " + what);
    };
    require(input_size > 0 && patch_size > 0, "sizes must be positive");
    require(input_size % patch_size == 0, "input_size must be a multiple of patch_size");
    require(embed_dim % 16 == 0, "embed_dim must be divisible by 16");
    require(embed_dim % decoder_heads == 0, "embed_dim must be divisible by decoder_heads");
    require((embed_dim / 2) % decoder_heads == 0, "embed_dim/2 must be divisible by decoder_heads");
    require(vit_dim % vit_heads == 0, "vit_dim must be divisible by vit_heads");
    require(vit_dim >= 4, "vit_dim must allow a bottleneck of at least 1");
    require(vit_depth >= 1, "vit_depth must be >= 1");
    require(prompt_token_count >= 1, "prompt_token_count must be >= 1");
    require(n_out == 5, "n_out must be 5 (IoU token + 4 mask tokens)");
    require(n_p == 2, "n_p must be 2 (point token + padding token)");
    require(lr_mask_size() % 2 == 0, "lr_mask_size must be even");
    require(vit_window >= 0 && vit_global_every >= 0, "window settings must be non-negative");
}

ScaleProfile ScaleProfile::desk()
{
    return ScaleProfile{};
}

ScaleProfile ScaleProfile::full()
{
    ScaleProfile p;
    p.name = "full";
    p.input_size = 1024;
    p.patch_size = 16;
    p.embed_dim = 256;
    p.vit_dim = 768;
    p.vit_depth = 12;
    p.vit_heads = 12;
    p.vit_window = 14;
    p.vit_global_every = 3;
    p.decoder_mlp_dim = 2048;
    p.iou_head_hidden = 256;
    return p;
}

ScaleProfile ScaleProfile::full_large()
{
    ScaleProfile p = full();
    p.name = "full-l";
    p.vit_dim = 1024;
    p.vit_depth = 24;
    p.vit_heads = 16;
    p.vit_global_every = 6;
    return p;
}

ScaleProfile ScaleProfile::by_name(const std::string& name)
{
    if (name == "desk")
        return desk();
    if (name == "full")
        return full();
    if (name == "full-l")
        return full_large();
    throw ConfigError("unknown profile '" + name + "'");
}

void to_json(nlohmann::json& j, const ScaleProfile& p)
{
    j = nlohmann::json{
        {"name", p.name},
        {"input_size", p.input_size},
        {"patch_size", p.patch_size},
        {"embed_dim", p.embed_dim},
        {"vit_dim", p.vit_dim},
        {"vit_depth", p.vit_depth},
        {"vit_heads", p.vit_heads},
        {"vit_mlp_ratio", p.vit_mlp_ratio},
        {"vit_window", p.vit_window},
        {"vit_global_every", p.vit_global_every},
        {"prompt_token_count", p.prompt_token_count},
        {"n_out", p.n_out},
        {"n_p", p.n_p},
        {"decoder_heads", p.decoder_heads},
        {"decoder_mlp_dim", p.decoder_mlp_dim},
        {"iou_head_hidden", p.iou_head_hidden},
    };
}

void from_json(const nlohmann::json& j, ScaleProfile& p)
{
    ScaleProfile base = ScaleProfile::by_name(j.value("name", std::string("desk")));
    base.input_size = j.value("input_size", base.input_size);
    base.patch_size = j.value("patch_size", base.patch_size);
    base.embed_dim = j.value("embed_dim", base.embed_dim);
    base.vit_dim = j.value("vit_dim", base.vit_dim);
    base.vit_depth = j.value("vit_depth", base.vit_depth);
    base.vit_heads = j.value("vit_heads", base.vit_heads);
    base.vit_mlp_ratio = j.value("vit_mlp_ratio", base.vit_mlp_ratio);
    base.vit_window = j.value("vit_window", base.vit_window);
    base.vit_global_every = j.value("vit_global_every", base.vit_global_every);
    base.prompt_token_count = j.value("prompt_token_count", base.prompt_token_count);
    base.n_out = j.value("n_out", base.n_out);
    base.n_p = j.value("n_p", base.n_p);
    base.decoder_heads = j.value("decoder_heads", base.decoder_heads);
    base.decoder_mlp_dim = j.value("decoder_mlp_dim", base.decoder_mlp_dim);
    base.iou_head_hidden = j.value("iou_head_hidden", base.iou_head_hidden);
    p = base;
}

} // namespace hisam
