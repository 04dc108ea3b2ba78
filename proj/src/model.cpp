// SPDX-License-Identifier: Apache-2.0
#include "hisam/model.hpp"

#include <cmath>

#include "hisam/errors.hpp"

namespace F = torch::nn::functional;
using torch::indexing::Slice;

namespace hisam {

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

LayerNorm2dImpl::LayerNorm2dImpl(int64_t channels, double eps_) : eps(eps_)
{
    weight = register_parameter("weight", torch::ones({channels}));
    bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x)
{
    auto u = x.mean(1, true);
    auto s = (x - u).pow(2).mean(1, true);
    auto y = (x - u) / torch::sqrt(s + eps);
    return weight.view({1, -1, 1, 1}) * y + bias.view({1, -1, 1, 1});
}

MLPImpl::MLPImpl(int64_t in, int64_t hidden, int64_t out, int num_layers, bool sigmoid_output_)
    : sigmoid_output(sigmoid_output_)
{
    layers = register_module("layers", torch::nn::ModuleList());
    for (int i = 0; i < num_layers; ++i) {
        int64_t a = i == 0 ? in : hidden;
        int64_t b = i == num_layers - 1 ? out : hidden;
        layers->push_back(torch::nn::Linear(a, b));
    }
}

torch::Tensor MLPImpl::forward(torch::Tensor x)
{
    const auto n = layers->size();
    for (size_t i = 0; i < n; ++i) {
        x = layers[i]->as<torch::nn::Linear>()->forward(x);
        if (i + 1 < n)
            x = torch::relu(x);
    }
    return sigmoid_output ? torch::sigmoid(x) : x;
}

AdapterImpl::AdapterImpl(int64_t dim, int64_t bottleneck, bool residual_, double scale_)
    : residual(residual_), scale(scale_)
{
    if (bottleneck < 1)
        throw ConfigError("adapter bottleneck must be >= 1");
    down = register_module("down", torch::nn::Linear(dim, bottleneck));
    up = register_module("up", torch::nn::Linear(bottleneck, dim));
    // Zero up-projection: the adapted block starts equal to the frozen block.
    torch::NoGradGuard guard;
    up->weight.zero_();
    up->bias.zero_();
}

torch::Tensor AdapterImpl::forward(const torch::Tensor& x)
{
    auto delta = up(torch::relu(down(x)));
    if (scale != 1.0)
        delta = delta * scale;
    return residual ? x + delta : delta;
}

torch::Tensor adapter_forward(const torch::Tensor& x, Adapter& adapter)
{
    if (x.size(-1) != adapter->down->options.in_features())
        throw ValidationError("adapter input width does not match adapter dimension");
    return x + adapter->up(torch::relu(adapter->down(x)));
}

AttentionImpl::AttentionImpl(int64_t dim, int64_t heads_, int64_t downsample_rate) : heads(heads_)
{
    const int64_t inner = dim / downsample_rate;
    if (inner % heads != 0)
        throw ConfigError("attention width must divide by head count");
    q_proj = register_module("q_proj", torch::nn::Linear(dim, inner));
    k_proj = register_module("k_proj", torch::nn::Linear(dim, inner));
    v_proj = register_module("v_proj", torch::nn::Linear(dim, inner));
    out_proj = register_module("out_proj", torch::nn::Linear(inner, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& q_in, const torch::Tensor& k_in, const torch::Tensor& v_in)
{
    auto split = [&](const torch::Tensor& x) {
        return x.view({x.size(0), x.size(1), heads, x.size(2) / heads}).transpose(1, 2);
    };
    auto q = split(q_proj(q_in));
    auto k = split(k_proj(k_in));
    auto v = split(v_proj(v_in));
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
    auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
    auto out = torch::matmul(attn, v).transpose(1, 2);
    out = out.reshape({out.size(0), out.size(1), -1});
    return out_proj(out);
}

// ---------------------------------------------------------------------------
// Image encoder
// ---------------------------------------------------------------------------

ViTBlockImpl::ViTBlockImpl(int64_t dim, int64_t heads_, int64_t mlp_ratio, int64_t window_, int64_t bottleneck)
    : heads(heads_), window(window_)
{
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
    qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
    proj = register_module("proj", torch::nn::Linear(dim, dim));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
    mlp_fc1 = register_module("mlp_fc1", torch::nn::Linear(dim, dim * mlp_ratio));
    mlp_fc2 = register_module("mlp_fc2", torch::nn::Linear(dim * mlp_ratio, dim));
    space_adapter = register_module("space_adapter", Adapter(dim, bottleneck, true));
    mlp_adapter = register_module("mlp_adapter", Adapter(dim, bottleneck, false, 0.5));
}

torch::Tensor ViTBlockImpl::attend(const torch::Tensor& x)
{
    const auto b = x.size(0), hh = x.size(1), ww = x.size(2), c = x.size(3);
    const auto t = hh * ww;
    auto qkv_out = qkv(x).reshape({b, t, 3, heads, c / heads}).permute({2, 0, 3, 1, 4});
    auto q = qkv_out[0], k = qkv_out[1], v = qkv_out[2];
    const double scale = 1.0 / std::sqrt(static_cast<double>(c / heads));
    auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
    auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, hh, ww, c});
    return proj(out);
}

torch::Tensor ViTBlockImpl::forward(const torch::Tensor& x)
{
    auto shortcut = x;
    auto y = norm1(x);
    if (window > 0) {
        const auto b = y.size(0), hh = y.size(1), ww = y.size(2), c = y.size(3);
        const auto pad_h = (window - hh % window) % window;
        const auto pad_w = (window - ww % window) % window;
        if (pad_h > 0 || pad_w > 0)
            y = F::pad(y, F::PadFuncOptions({0, 0, 0, pad_w, 0, pad_h}));
        const auto hp = hh + pad_h, wp = ww + pad_w;
        y = y.view({b, hp / window, window, wp / window, window, c})
                .permute({0, 1, 3, 2, 4, 5})
                .reshape({-1, window, window, c});
        y = attend(y);
        y = y.view({b, hp / window, wp / window, window, window, c})
                .permute({0, 1, 3, 2, 4, 5})
                .reshape({b, hp, wp, c});
        y = y.index({Slice(), Slice(0, hh), Slice(0, ww)}).contiguous();
    } else {
        y = attend(y);
    }
    if (adapters_enabled)
        y = space_adapter(y);
    auto z = shortcut + y;
    auto zn = norm2(z);
    auto out = z + mlp_fc2(F::gelu(mlp_fc1(zn)));
    if (adapters_enabled)
        out = out + mlp_adapter(zn);
    return out;
}

ImageEncoderImpl::ImageEncoderImpl(const ScaleProfile& p) : profile(p)
{
    profile.validate();
    const int64_t d = profile.vit_dim;
    const int64_t hw = profile.embed_hw();
    patch_embed = register_module(
        "patch_embed",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(3, d, profile.patch_size).stride(profile.patch_size)));
    pos_embed = register_parameter("pos_embed", torch::randn({1, hw, hw, d}) * 0.02);
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < profile.vit_depth; ++i) {
        int64_t window = profile.vit_window;
        if (window > 0 && profile.vit_global_every > 0 && (i + 1) % profile.vit_global_every == 0)
            window = 0;
        blocks->push_back(ViTBlock(d, profile.vit_heads, profile.vit_mlp_ratio, window, profile.adapter_bottleneck()));
    }
    const int64_t c = profile.embed_dim;
    neck_conv1 = register_module("neck_conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(d, c, 1).bias(false)));
    neck_norm1 = register_module("neck_norm1", LayerNorm2d(c));
    neck_conv2 = register_module("neck_conv2",
                                 torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding(1).bias(false)));
    neck_norm2 = register_module("neck_norm2", LayerNorm2d(c));
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images)
{
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != profile.input_size ||
        images.size(3) != profile.input_size)
        throw ConfigError("encoder expects [B, 3, " + std::to_string(profile.input_size) + ", " +
                          std::to_string(profile.input_size) + "] input");
    if (!torch::isfinite(images).all().item<bool>())
        throw ValidationError("non-finite values in encoder input");
    auto x = patch_embed(images).permute({0, 2, 3, 1}) + pos_embed;
    for (auto& block : *blocks)
        x = block->as<ViTBlock>()->forward(x);
    x = x.permute({0, 3, 1, 2});
    return neck_norm2(neck_conv2(neck_norm1(neck_conv1(x))));
}

void ImageEncoderImpl::set_adapters_enabled(bool enabled)
{
    for (auto& block : *blocks)
        block->as<ViTBlock>()->adapters_enabled = enabled;
}

// ---------------------------------------------------------------------------
// Prompt encoder
// ---------------------------------------------------------------------------

PromptEncoderImpl::PromptEncoderImpl(const ScaleProfile& p) : profile(p)
{
    const int64_t c = profile.embed_dim;
    gaussian = register_buffer("gaussian", torch::randn({2, c / 2}));
    bg_point_embed = register_parameter("bg_point_embed", torch::randn({1, c}));
    fg_point_embed = register_parameter("fg_point_embed", torch::randn({1, c}));
    not_a_point_embed = register_parameter("not_a_point_embed", torch::randn({1, c}));
    no_mask_embed = register_parameter("no_mask_embed", torch::randn({1, c}));
}

torch::Tensor PromptEncoderImpl::encode_coords(const torch::Tensor& unit_coords) const
{
    auto coords = torch::matmul(unit_coords * 2.0 - 1.0, gaussian) * (2.0 * M_PI);
    return torch::cat({torch::sin(coords), torch::cos(coords)}, -1);
}

torch::Tensor PromptEncoderImpl::dense_pe() const
{
    const int64_t hw = profile.embed_hw();
    auto ramp = (torch::arange(hw, torch::kFloat) + 0.5) / static_cast<double>(hw);
    auto ys = ramp.view({hw, 1}).expand({hw, hw});
    auto xs = ramp.view({1, hw}).expand({hw, hw});
    auto pe = encode_coords(torch::stack({xs, ys}, -1));  // [h, w, C]
    return pe.permute({2, 0, 1}).unsqueeze(0);
}

torch::Tensor PromptEncoderImpl::dense_no_mask() const
{
    const int64_t hw = profile.embed_hw();
    return no_mask_embed.view({1, -1, 1, 1}).expand({1, profile.embed_dim, hw, hw});
}

torch::Tensor PromptEncoderImpl::encode_points(const torch::Tensor& points) const
{
    const int64_t k = points.size(0);
    const int64_t c = profile.embed_dim;
    if (k == 0)
        return torch::zeros({0, profile.n_p, c});
    auto unit = (points.to(torch::kFloat) + 0.5) / static_cast<double>(profile.input_size);
    auto point_tok = encode_coords(unit) + fg_point_embed;   // [K, C]
    auto pad_tok = not_a_point_embed.expand({k, c});
    return torch::stack({point_tok, pad_tok}, 1);
}

torch::Tensor encode_points(const PromptEncoder& encoder, const std::vector<std::pair<float, float>>& points)
{
    const float size = static_cast<float>(encoder->profile.input_size);
    auto t = torch::zeros({static_cast<int64_t>(points.size()), 2});
    auto acc = t.accessor<float, 2>();
    for (size_t i = 0; i < points.size(); ++i) {
        const auto [x, y] = points[i];
        if (!(x >= 0.f && y >= 0.f && x < size && y < size))
            throw ValidationError("point (" + std::to_string(x) + ", " + std::to_string(y) +
                                  ") lies outside the input image");
        acc[i][0] = x;
        acc[i][1] = y;
    }
    return encoder->encode_points(t);
}

// ---------------------------------------------------------------------------
// Self-prompting
// ---------------------------------------------------------------------------

TokenDecoderLayerImpl::TokenDecoderLayerImpl(int64_t dim, int64_t heads, int64_t ffn_dim)
{
    self_attn = register_module("self_attn", Attention(dim, heads));
    cross_attn = register_module("cross_attn", Attention(dim, heads));
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    ffn1 = register_module("ffn1", torch::nn::Linear(dim, ffn_dim));
    ffn2 = register_module("ffn2", torch::nn::Linear(ffn_dim, dim));
}

torch::Tensor TokenDecoderLayerImpl::forward(const torch::Tensor& tokens, const torch::Tensor& image)
{
    auto t = norm1(tokens + self_attn(tokens, tokens, tokens));
    t = norm2(t + cross_attn(t, image, image));
    return norm3(t + ffn2(torch::relu(ffn1(t))));
}

SelfPromptImpl::SelfPromptImpl(const ScaleProfile& profile, bool use_token_decoder_, TokenSource source_)
    : use_token_decoder(use_token_decoder_), source(source_)
{
    const int64_t c = profile.embed_dim;
    const int64_t n = profile.prompt_token_count;
    conv_block = register_module("conv_block", torch::nn::ModuleList());
    for (int i = 0; i < 4; ++i)
        conv_block->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(i == 0 ? c : n, n, 3).padding(1)));
    token_decoder = register_module("token_decoder", TokenDecoderLayer(c, profile.decoder_heads, 2 * c));
    if (source == TokenSource::VanillaEmbedding)
        vanilla_tokens = register_parameter("vanilla_tokens", torch::randn({n, c}) * 0.02);
}

torch::Tensor SelfPromptImpl::spatial_attention(const torch::Tensor& embedding)
{
    auto x = embedding;
    for (size_t i = 0; i < conv_block->size(); ++i) {
        if (i > 0)
            x = F::gelu(x);
        x = conv_block[i]->as<torch::nn::Conv2d>()->forward(x);
    }
    return torch::sigmoid(x);
}

torch::Tensor SelfPromptImpl::tokenize(const torch::Tensor& embedding, const torch::Tensor& attention)
{
    if (embedding.size(2) != attention.size(2) || embedding.size(3) != attention.size(3))
        throw ConfigError("attention map and embedding disagree on spatial size");
    const double cells = static_cast<double>(embedding.size(2) * embedding.size(3));
    auto a = attention.flatten(2);                  // [B, N, hw]
    auto img = embedding.flatten(2).transpose(1, 2);  // [B, hw, C]
    return torch::matmul(a, img) / cells;
}

torch::Tensor SelfPromptImpl::refine(const torch::Tensor& tokens, const torch::Tensor& embedding)
{
    return token_decoder(tokens, embedding.flatten(2).transpose(1, 2));
}

torch::Tensor SelfPromptImpl::forward(const torch::Tensor& embedding)
{
    torch::Tensor tokens;
    if (source == TokenSource::VanillaEmbedding)
        tokens = vanilla_tokens.unsqueeze(0).expand({embedding.size(0), -1, -1});
    else
        tokens = tokenize(embedding, spatial_attention(embedding));
    return use_token_decoder ? refine(tokens, embedding) : tokens;
}

// ---------------------------------------------------------------------------
// Two-way transformer
// ---------------------------------------------------------------------------

TwoWayBlockImpl::TwoWayBlockImpl(int64_t dim, int64_t heads, int64_t mlp_dim, bool skip_first_layer_pe_)
    : skip_first_layer_pe(skip_first_layer_pe_)
{
    self_attn = register_module("self_attn", Attention(dim, heads));
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    cross_token_to_image = register_module("cross_token_to_image", Attention(dim, heads, 2));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    mlp1 = register_module("mlp1", torch::nn::Linear(dim, mlp_dim));
    mlp2 = register_module("mlp2", torch::nn::Linear(mlp_dim, dim));
    norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    norm4 = register_module("norm4", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    cross_image_to_token = register_module("cross_image_to_token", Attention(dim, heads, 2));
}

std::pair<torch::Tensor, torch::Tensor> TwoWayBlockImpl::forward(torch::Tensor queries, torch::Tensor keys,
                                                                 const torch::Tensor& query_pe,
                                                                 const torch::Tensor& key_pe)
{
    if (skip_first_layer_pe) {
        queries = self_attn(queries, queries, queries);
    } else {
        auto q = queries + query_pe;
        queries = queries + self_attn(q, q, queries);
    }
    queries = norm1(queries);

    auto q = queries + query_pe;
    auto k = keys + key_pe;
    queries = norm2(queries + cross_token_to_image(q, k, keys));

    queries = norm3(queries + mlp2(torch::relu(mlp1(queries))));

    q = queries + query_pe;
    k = keys + key_pe;
    keys = norm4(keys + cross_image_to_token(k, q, queries));
    return {queries, keys};
}

TwoWayTransformerImpl::TwoWayTransformerImpl(int64_t depth, int64_t dim, int64_t heads, int64_t mlp_dim)
{
    layers = register_module("layers", torch::nn::ModuleList());
    for (int64_t i = 0; i < depth; ++i)
        layers->push_back(TwoWayBlock(dim, heads, mlp_dim, i == 0));
    final_attn = register_module("final_attn", Attention(dim, heads, 2));
    norm_final = register_module("norm_final", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

std::pair<torch::Tensor, torch::Tensor> TwoWayTransformerImpl::forward(const torch::Tensor& image,
                                                                       const torch::Tensor& image_pe,
                                                                       const torch::Tensor& tokens)
{
    auto keys = image.flatten(2).permute({0, 2, 1});
    auto key_pe = image_pe.flatten(2).permute({0, 2, 1});
    auto queries = tokens;
    for (auto& layer : *layers)
        std::tie(queries, keys) = layer->as<TwoWayBlock>()->forward(queries, keys, tokens, key_pe);
    auto q = queries + tokens;
    auto k = keys + key_pe;
    queries = norm_final(queries + final_attn(q, k, keys));
    return {queries, keys};
}

torch::Tensor pointwise_product(const torch::Tensor& vectors, const torch::Tensor& features)
{
    const auto b = features.size(0), d = features.size(1), y = features.size(2), x = features.size(3);
    auto out = torch::bmm(vectors.view({b, 1, d}), features.reshape({b, d, y * x}));
    return out.view({b, y, x});
}

namespace {

torch::nn::ModuleList make_refiner(int64_t channels)
{
    torch::nn::ModuleList list;
    for (int i = 0; i < 4; ++i)
        list->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
    return list;
}

torch::Tensor run_refiner(torch::nn::ModuleList& list, torch::Tensor x)
{
    for (size_t i = 0; i < list->size(); ++i) {
        if (i > 0)
            x = F::gelu(x);
        x = list[i]->as<torch::nn::Conv2d>()->forward(x);
    }
    return x;
}

torch::nn::ConvTranspose2d up2x(int64_t in, int64_t out)
{
    return torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 2).stride(2));
}

} // namespace

// ---------------------------------------------------------------------------
// S-Decoder
// ---------------------------------------------------------------------------

SDecoderImpl::SDecoderImpl(const ScaleProfile& p, bool use_hr_) : profile(p), use_hr(use_hr_)
{
    const int64_t c = profile.embed_dim;
    transformer = register_module("transformer",
                                  TwoWayTransformer(2, c, profile.decoder_heads, profile.decoder_mlp_dim));
    iou_token = register_parameter("iou_token", torch::randn({1, c}));
    mask_token = register_parameter("mask_token", torch::randn({1, c}));
    up1 = register_module("up1", up2x(c, c / 4));
    up_norm = register_module("up_norm", LayerNorm2d(c / 4));
    up2 = register_module("up2", up2x(c / 4, c / 8));
    hypernet = register_module("hypernet", MLP(c, c, c / 8, 3));
    iou_head = register_module("iou_head", MLP(c, profile.iou_head_hidden, 1, 3, true));

    hr_up1 = register_module("hr_up1", up2x(c / 8, c / 16));
    hr_up_norm = register_module("hr_up_norm", LayerNorm2d(c / 16));
    hr_up2 = register_module("hr_up2", up2x(c / 16, c / 16));
    hr_refine = register_module("hr_refine", make_refiner(c / 16));
    hr_hypernet = register_module("hr_hypernet", MLP(c, c, c / 16, 3));
}

torch::Tensor SDecoderImpl::upsample_mask_features(const torch::Tensor& features_lr)
{
    auto x = F::gelu(hr_up_norm(hr_up1(features_lr)));
    x = F::gelu(hr_up2(x));
    return run_refiner(hr_refine, x);
}

std::pair<torch::Tensor, torch::Tensor> SDecoderImpl::hr_logits(const torch::Tensor& features_lr,
                                                                const torch::Tensor& token)
{
    auto features_hr = upsample_mask_features(features_lr);
    auto logits = pointwise_product(hr_hypernet(token), features_hr);
    return {features_hr, logits};
}

PixelTextOutput SDecoderImpl::forward(const torch::Tensor& embedding, const torch::Tensor& image_pe,
                                      const torch::Tensor& prompt_tokens)
{
    const int64_t c = profile.embed_dim;
    const int64_t hw = profile.embed_hw();
    if (embedding.dim() != 4 || embedding.size(1) != c || embedding.size(2) != hw || embedding.size(3) != hw)
        throw ConfigError("S-Decoder: embedding shape does not match the profile");
    if (prompt_tokens.dim() != 3 || prompt_tokens.size(2) != c || prompt_tokens.size(0) != embedding.size(0))
        throw ConfigError("S-Decoder: prompt tokens shape does not match the profile");
    const int64_t b = embedding.size(0);

    auto out_tokens = torch::cat({iou_token, mask_token}, 0).unsqueeze(0).expand({b, -1, -1});
    auto tokens = torch::cat({out_tokens, prompt_tokens}, 1);
    auto [hs, src] = transformer(embedding, image_pe.expand({b, -1, -1, -1}), tokens);

    PixelTextOutput out;
    auto iou_out = hs.index({Slice(), 0});
    out.updated_token = hs.index({Slice(), 1});
    src = src.transpose(1, 2).reshape({b, c, hw, hw});
    out.features_lr = F::gelu(up2(F::gelu(up_norm(up1(src)))));
    out.m_lr = pointwise_product(hypernet(out.updated_token), out.features_lr);
    out.iou_pred = iou_head(iou_out).squeeze(-1);
    if (use_hr)
        out.m_hr = hr_logits(out.features_lr, out.updated_token).second;
    return out;
}

// ---------------------------------------------------------------------------
// H-Decoder
// ---------------------------------------------------------------------------

HDecoderImpl::HDecoderImpl(const ScaleProfile& p) : profile(p)
{
    const int64_t c = profile.embed_dim;
    const int64_t n_mask = profile.n_out - 1;
    transformer = register_module("transformer",
                                  TwoWayTransformer(2, c, profile.decoder_heads, profile.decoder_mlp_dim));
    iou_token = register_parameter("iou_token", torch::randn({1, c}));
    mask_tokens = register_parameter("mask_tokens", torch::randn({n_mask, c}));
    up1 = register_module("up1", up2x(c, c / 4));
    up_norm = register_module("up_norm", LayerNorm2d(c / 4));
    up2 = register_module("up2", up2x(c / 4, c / 8));
    hypernets = register_module("hypernets", torch::nn::ModuleList());
    for (int64_t i = 0; i < n_mask; ++i)
        hypernets->push_back(MLP(c, c, c / 8, 3));
    iou_head = register_module("iou_head", MLP(c, profile.iou_head_hidden, n_mask, 3, true));
    word_reduce = register_module("word_reduce", torch::nn::Conv2d(torch::nn::Conv2dOptions(c / 8, c / 16, 1)));
    word_refine = register_module("word_refine", make_refiner(c / 16));
    word_hypernet = register_module("word_hypernet", MLP(c, c, c / 16, 3));
}

HierOutput HDecoderImpl::forward(const torch::Tensor& embedding, const torch::Tensor& image_pe,
                                 const torch::Tensor& dense, const torch::Tensor& point_tokens)
{
    const int64_t c = profile.embed_dim;
    const int64_t hw = profile.embed_hw();
    const int64_t lr = profile.lr_mask_size();
    const int64_t wr = profile.word_hr_size();
    if (embedding.dim() != 4 || embedding.size(0) != 1 || embedding.size(1) != c || embedding.size(2) != hw)
        throw ConfigError("H-Decoder: expects a single [1, C, h, w] embedding matching the profile");
    if (point_tokens.dim() != 3 || point_tokens.size(1) != profile.n_p || point_tokens.size(2) != c)
        throw ConfigError("H-Decoder: point tokens must be [K, n_p, C]");
    const int64_t k = point_tokens.size(0);

    HierOutput out;
    if (k == 0) {
        out.word_lr = torch::zeros({0, lr, lr});
        out.word_hr = torch::zeros({0, wr, wr});
        out.line = torch::zeros({0, lr, lr});
        out.para = torch::zeros({0, lr, lr});
        out.iou = torch::zeros({0, 3});
        out.features_lr = torch::zeros({0, c / 8, lr, lr});
        out.tokens = torch::zeros({0, 3, c});
        return out;
    }

    auto out_tokens = torch::cat({iou_token, mask_tokens}, 0).unsqueeze(0).expand({k, -1, -1});
    auto tokens = torch::cat({out_tokens, point_tokens}, 1);
    auto src = embedding.expand({k, -1, -1, -1}) + dense;
    auto [hs, keys] = transformer(src, image_pe.expand({k, -1, -1, -1}), tokens);

    auto iou_out = hs.index({Slice(), 0});
    out.tokens = hs.index({Slice(), Slice(2, 5)});   // word, line, para
    keys = keys.transpose(1, 2).reshape({k, c, hw, hw});
    out.features_lr = F::gelu(up2(F::gelu(up_norm(up1(keys)))));

    std::vector<torch::Tensor> maps;
    for (int64_t i = 0; i < 3; ++i) {
        auto vec = hypernets[i + 1]->as<MLP>()->forward(out.tokens.index({Slice(), i}));
        maps.push_back(pointwise_product(vec, out.features_lr));
    }
    out.word_lr = maps[0];
    out.line = maps[1];
    out.para = maps[2];
    out.iou = iou_head(iou_out).index({Slice(), Slice(1, 4)});

    auto reduced = word_reduce(out.features_lr);
    auto upsampled = F::interpolate(reduced, F::InterpolateFuncOptions()
                                                 .size(std::vector<int64_t>{wr, wr})
                                                 .mode(torch::kBilinear)
                                                 .align_corners(false));
    auto refined = run_refiner(word_refine, upsampled);
    out.word_hr = pointwise_product(word_hypernet(out.tokens.index({Slice(), 0})), refined);
    return out;
}

std::vector<HierPrediction> split_predictions(const HierOutput& out)
{
    std::vector<HierPrediction> rows;
    const auto k = out.size();
    auto iou = out.iou.detach().contiguous();
    for (int64_t i = 0; i < k; ++i) {
        HierPrediction p;
        p.word_kernel_lr = out.word_lr[i];
        p.word_kernel_hr = out.word_hr[i];
        p.line = out.line[i];
        p.para = out.para[i];
        p.iou_line = iou[i][1].item<float>();
        p.iou_para = iou[i][2].item<float>();
        rows.push_back(std::move(p));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Whole model
// ---------------------------------------------------------------------------

HiSamImpl::HiSamImpl(const ScaleProfile& p, ModelOptions opts) : profile(p), options(opts)
{
    profile.validate();
    encoder = register_module("encoder", ImageEncoder(profile));
    prompt_encoder = register_module("prompt_encoder", PromptEncoder(profile));
    self_prompt = register_module("self_prompt", SelfPrompt(profile, options.use_token_decoder, options.token_source));
    s_decoder = register_module("s_decoder", SDecoder(profile, options.use_hr));
    h_decoder = register_module("h_decoder", HDecoder(profile));
    apply_freeze(*this);
}

torch::Tensor HiSamImpl::embed(const torch::Tensor& images)
{
    ++encoder_calls;
    return encoder(images);
}

PixelTextOutput HiSamImpl::segment_text(const torch::Tensor& embedding)
{
    ++s_decoder_calls;
    auto tokens = self_prompt(embedding);
    return s_decoder(embedding, prompt_encoder->dense_pe(), tokens);
}

HierOutput HiSamImpl::decode_points(const torch::Tensor& embedding, const torch::Tensor& points)
{
    ++h_decoder_calls;
    auto tokens = prompt_encoder->encode_points(points);
    return h_decoder(embedding, prompt_encoder->dense_pe(), prompt_encoder->dense_no_mask(), tokens);
}

bool is_trainable_name(const std::string& name)
{
    auto starts = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
    if (starts("self_prompt.") || starts("s_decoder.") || starts("h_decoder."))
        return true;
    if (starts("encoder."))
        return name.find("_adapter.") != std::string::npos;
    return false;
}

void apply_freeze(HiSamImpl& model)
{
    for (auto& item : model.named_parameters())
        item.value().set_requires_grad(is_trainable_name(item.key()));
}

std::vector<std::pair<std::string, torch::Tensor>> HiSamImpl::trainable_parameters() const
{
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : named_parameters())
        if (is_trainable_name(item.key()))
            out.emplace_back(item.key(), item.value());
    return out;
}

std::vector<std::pair<std::string, torch::Tensor>> HiSamImpl::frozen_parameters() const
{
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : named_parameters())
        if (!is_trainable_name(item.key()))
            out.emplace_back(item.key(), item.value());
    for (const auto& item : named_buffers())
        out.emplace_back(item.key(), item.value());
    return out;
}

torch::Tensor normalize_image(const torch::Tensor& rgb_hwc_u8, const ScaleProfile& profile, const PixelStats& stats)
{
    if (rgb_hwc_u8.dim() != 3 || rgb_hwc_u8.size(2) != 3 || rgb_hwc_u8.size(0) != profile.input_size ||
        rgb_hwc_u8.size(1) != profile.input_size)
        throw ConfigError("image must be " + std::to_string(profile.input_size) + "x" +
                          std::to_string(profile.input_size) + "x3");
    auto x = rgb_hwc_u8.to(torch::kFloat).permute({2, 0, 1});
    if (!torch::isfinite(x).all().item<bool>())
        throw ValidationError("non-finite pixel values");
    auto mean = torch::tensor({stats.mean[0], stats.mean[1], stats.mean[2]}).view({3, 1, 1});
    auto stddev = torch::tensor({stats.stddev[0], stats.stddev[1], stats.stddev[2]}).view({3, 1, 1});
    return ((x - mean) / stddev).unsqueeze(0).contiguous();
}

torch::Tensor resize_logits(const torch::Tensor& logits, int64_t size)
{
    auto x = logits;
    const auto dims = x.dim();
    while (x.dim() < 4)
        x = x.unsqueeze(0);
    if (x.size(-1) != size || x.size(-2) != size)
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{size, size})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    for (auto d = dims; d < 4; ++d)
        x = x.squeeze(0);
    return x;
}

torch::Tensor binarize(const torch::Tensor& logits, int64_t size, double threshold)
{
    return resize_logits(logits, size) > threshold;
}

FlopReport count_text_flops(const ScaleProfile& p)
{
    FlopReport r;
    const double d = p.vit_dim, c = p.embed_dim, hw = p.embed_hw();
    const double t = hw * hw;
    const double n = p.prompt_token_count;

    // encoder
    r.encoder += t * d * 3.0 * p.patch_size * p.patch_size;
    for (int i = 0; i < p.vit_depth; ++i) {
        r.encoder += t * d * d * (4.0 + 2.0 * p.vit_mlp_ratio);
        r.encoder += t * d * d / 4.0 * 4.0;   // two adapters, down+up each
        const bool global = p.vit_window == 0 || (p.vit_global_every > 0 && (i + 1) % p.vit_global_every == 0);
        if (global) {
            r.encoder += 2.0 * t * t * d;
        } else {
            const double ws = p.vit_window;
            const double per_side = std::ceil(hw / ws);
            r.encoder += per_side * per_side * 2.0 * ws * ws * ws * ws * d;
        }
    }
    r.encoder += t * d * c + t * 9.0 * c * c;

    // self-prompting
    r.self_prompt += t * 9.0 * c * n + 3.0 * t * 9.0 * n * n + n * c * t;
    r.self_prompt += 4.0 * n * c * c + 2.0 * n * n * c + 2.0 * n * c * c + 2.0 * n * t * c + 4.0 * n * c * c;

    // S-decoder up to the LR logits
    const double tok = 2.0 + n;
    const double half = c / 2.0;
    auto attn = [&](double nq, double nk, double width) {
        return nq * c * width + 2.0 * nk * c * width + 2.0 * nq * nk * width + nq * width * c;
    };
    for (int layer = 0; layer < 2; ++layer) {
        r.s_decoder_lr += attn(tok, tok, c);
        r.s_decoder_lr += attn(tok, t, half);
        r.s_decoder_lr += 2.0 * tok * c * p.decoder_mlp_dim;
        r.s_decoder_lr += attn(t, tok, half);
    }
    r.s_decoder_lr += attn(tok, t, half);
    const double lr = p.lr_mask_size();
    r.s_decoder_lr += (2 * hw) * (2 * hw) * c * (c / 4) + lr * lr * (c / 4) * (c / 8);
    r.s_decoder_lr += lr * lr * (c / 8) + 3.0 * c * c;

    // HR branch
    const double hr = p.hr_mask_size();
    const double c8 = c / 8, c16 = c / 16;
    r.s_decoder_hr += (2 * lr) * (2 * lr) * c8 * c16 + hr * hr * c16 * c16;
    r.s_decoder_hr += 4.0 * hr * hr * 9.0 * c16 * c16;
    r.s_decoder_hr += hr * hr * c16 + 2.0 * c * c + c * c16;
    return r;
}

} // namespace hisam
