// SPDX-License-Identifier: Apache-2.0
//
// Network: a SAM-style ViT image encoder with frozen base weights and
// trainable adapters, the frozen point prompt encoder, the self-prompting
// module, the pixel-text mask decoder (S-Decoder) and the hierarchical
// word/line/paragraph decoder (H-Decoder).
//
// Tensors are NCHW internally. Shapes in comments use the profile symbols:
//   C = embed_dim, h = embed_hw, L = lr_mask_size, H = hr_mask_size,
//   W = word_hr_size, N = prompt_token_count.
#pragma once

#include <array>
#include <atomic>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "hisam/profile.hpp"

namespace hisam {

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

struct LayerNorm2dImpl : torch::nn::Module {
    explicit LayerNorm2dImpl(int64_t channels, double eps = 1e-6);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight, bias;
    double eps;
};
TORCH_MODULE(LayerNorm2d);

/// Stack of linear layers with ReLU in between; optional sigmoid on the output.
struct MLPImpl : torch::nn::Module {
    MLPImpl(int64_t in, int64_t hidden, int64_t out, int num_layers, bool sigmoid_output = false);
    torch::Tensor forward(torch::Tensor x);

    torch::nn::ModuleList layers;
    bool sigmoid_output;
};
TORCH_MODULE(MLP);

/// Bottleneck adapter: up(relu(down(x))), optionally added back to x.
struct AdapterImpl : torch::nn::Module {
    AdapterImpl(int64_t dim, int64_t bottleneck, bool residual, double scale = 1.0);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear down{nullptr}, up{nullptr};
    bool residual;
    double scale;
};
TORCH_MODULE(Adapter);

/// Multi-head attention with an optional internal down-projection, as used
/// throughout the SAM mask decoder. q, k, v are [B, tokens, dim].
struct AttentionImpl : torch::nn::Module {
    AttentionImpl(int64_t dim, int64_t heads, int64_t downsample_rate = 1);
    torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v);

    torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};
    int64_t heads;
};
TORCH_MODULE(Attention);

// ---------------------------------------------------------------------------
// Image encoder
// ---------------------------------------------------------------------------

struct ViTBlockImpl : torch::nn::Module {
    ViTBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio, int64_t window, int64_t bottleneck);
    /// x: [B, h, w, dim]
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Linear qkv{nullptr}, proj{nullptr};
    torch::nn::Linear mlp_fc1{nullptr}, mlp_fc2{nullptr};
    Adapter space_adapter{nullptr};   // serial, after attention
    Adapter mlp_adapter{nullptr};     // parallel to the MLP
    int64_t heads;
    int64_t window;
    bool adapters_enabled = true;

private:
    torch::Tensor attend(const torch::Tensor& x);
};
TORCH_MODULE(ViTBlock);

struct ImageEncoderImpl : torch::nn::Module {
    explicit ImageEncoderImpl(const ScaleProfile& profile);
    /// images: [B, 3, S, S] normalized -> [B, C, h, w]
    torch::Tensor forward(const torch::Tensor& images);
    void set_adapters_enabled(bool enabled);

    ScaleProfile profile;
    torch::nn::Conv2d patch_embed{nullptr};
    torch::Tensor pos_embed;
    torch::nn::ModuleList blocks;
    torch::nn::Conv2d neck_conv1{nullptr}, neck_conv2{nullptr};
    LayerNorm2d neck_norm1{nullptr}, neck_norm2{nullptr};
};
TORCH_MODULE(ImageEncoder);

/// Residual adapter evaluation outside of a block, x + up(relu(down(x))).
torch::Tensor adapter_forward(const torch::Tensor& x, Adapter& adapter);

// ---------------------------------------------------------------------------
// Prompt encoder (always frozen)
// ---------------------------------------------------------------------------

struct PromptEncoderImpl : torch::nn::Module {
    explicit PromptEncoderImpl(const ScaleProfile& profile);

    /// Random-Fourier positional encoding of coordinates already scaled to [0,1].
    torch::Tensor encode_coords(const torch::Tensor& unit_coords) const;
    /// Dense positional encoding of the embedding grid: [1, C, h, w].
    torch::Tensor dense_pe() const;
    /// Dense "no mask" embedding: [1, C, h, w].
    torch::Tensor dense_no_mask() const;
    /// points: [K, 2] (x, y) in input pixels -> [K, n_p, C].
    torch::Tensor encode_points(const torch::Tensor& points) const;

    ScaleProfile profile;
    torch::Tensor gaussian;           // [2, C/2]
    torch::Tensor fg_point_embed;     // [1, C]
    torch::Tensor bg_point_embed;     // [1, C]
    torch::Tensor not_a_point_embed;  // [1, C]
    torch::Tensor no_mask_embed;      // [1, C]
};
TORCH_MODULE(PromptEncoder);

/// Validated entry point: points as (x, y) pixel pairs. Throws ValidationError
/// for out-of-bounds points.
torch::Tensor encode_points(const PromptEncoder& encoder, const std::vector<std::pair<float, float>>& points);

// ---------------------------------------------------------------------------
// Self-prompting
// ---------------------------------------------------------------------------

/// One post-norm transformer decoder layer: self-attention over the tokens,
/// cross-attention from tokens to the image, feed-forward.
struct TokenDecoderLayerImpl : torch::nn::Module {
    TokenDecoderLayerImpl(int64_t dim, int64_t heads, int64_t ffn_dim);
    /// tokens [B, N, C], image [B, hw, C]
    torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& image);

    Attention self_attn{nullptr}, cross_attn{nullptr};
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
    torch::nn::Linear ffn1{nullptr}, ffn2{nullptr};
};
TORCH_MODULE(TokenDecoderLayer);

enum class TokenSource { SpatialAttention, VanillaEmbedding };

struct SelfPromptImpl : torch::nn::Module {
    SelfPromptImpl(const ScaleProfile& profile, bool use_token_decoder = true,
                   TokenSource source = TokenSource::SpatialAttention);

    /// [B, C, h, w] -> attention map in (0,1), [B, N, h, w]
    torch::Tensor spatial_attention(const torch::Tensor& embedding);
    /// token_k[c] = mean_{h,w} A[k,h,w] * I[c,h,w]  -> [B, N, C]
    static torch::Tensor tokenize(const torch::Tensor& embedding, const torch::Tensor& attention);
    torch::Tensor refine(const torch::Tensor& tokens, const torch::Tensor& embedding);
    /// Full module: prompt tokens [B, N, C].
    torch::Tensor forward(const torch::Tensor& embedding);

    torch::nn::ModuleList conv_block;
    TokenDecoderLayer token_decoder{nullptr};
    torch::Tensor vanilla_tokens;     // only with TokenSource::VanillaEmbedding
    bool use_token_decoder;
    TokenSource source;
};
TORCH_MODULE(SelfPrompt);

// ---------------------------------------------------------------------------
// Two-way transformer shared by both decoders
// ---------------------------------------------------------------------------

struct TwoWayBlockImpl : torch::nn::Module {
    TwoWayBlockImpl(int64_t dim, int64_t heads, int64_t mlp_dim, bool skip_first_layer_pe);
    std::pair<torch::Tensor, torch::Tensor> forward(torch::Tensor queries, torch::Tensor keys,
                                                    const torch::Tensor& query_pe, const torch::Tensor& key_pe);

    Attention self_attn{nullptr}, cross_token_to_image{nullptr}, cross_image_to_token{nullptr};
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr}, norm4{nullptr};
    torch::nn::Linear mlp1{nullptr}, mlp2{nullptr};
    bool skip_first_layer_pe;
};
TORCH_MODULE(TwoWayBlock);

struct TwoWayTransformerImpl : torch::nn::Module {
    TwoWayTransformerImpl(int64_t depth, int64_t dim, int64_t heads, int64_t mlp_dim);
    /// image [B, C, h, w], image_pe [B, C, h, w], tokens [B, T, C]
    /// -> (tokens [B, T, C], image [B, hw, C])
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& image, const torch::Tensor& image_pe,
                                                    const torch::Tensor& tokens);

    torch::nn::ModuleList layers;
    Attention final_attn{nullptr};
    torch::nn::LayerNorm norm_final{nullptr};
};
TORCH_MODULE(TwoWayTransformer);

/// Per-pixel dot product of a vector per batch row with a feature map:
/// vectors [B, D], features [B, D, y, x] -> [B, y, x].
torch::Tensor pointwise_product(const torch::Tensor& vectors, const torch::Tensor& features);

// ---------------------------------------------------------------------------
// S-Decoder (pixel-level text)
// ---------------------------------------------------------------------------

struct PixelTextOutput {
    torch::Tensor m_lr;          // [B, L, L]
    torch::Tensor m_hr;          // [B, H, H]; undefined when the HR branch is off
    torch::Tensor iou_pred;      // [B] in [0,1]
    torch::Tensor updated_token; // [B, C]
    torch::Tensor features_lr;   // [B, C/8, L, L]
};

struct SDecoderImpl : torch::nn::Module {
    explicit SDecoderImpl(const ScaleProfile& profile, bool use_hr = true);

    /// embedding [B, C, h, w], image_pe [1, C, h, w], prompt tokens [B, N, C]
    PixelTextOutput forward(const torch::Tensor& embedding, const torch::Tensor& image_pe,
                            const torch::Tensor& prompt_tokens);
    /// LR features [B, C/8, L, L] -> refined HR features [B, C/16, H, H]
    torch::Tensor upsample_mask_features(const torch::Tensor& features_lr);
    /// (HR features, m_hr) from LR features and the updated output token.
    std::pair<torch::Tensor, torch::Tensor> hr_logits(const torch::Tensor& features_lr, const torch::Tensor& token);

    ScaleProfile profile;
    TwoWayTransformer transformer{nullptr};
    torch::Tensor iou_token, mask_token;            // [1, C] each
    torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr};
    LayerNorm2d up_norm{nullptr};
    MLP hypernet{nullptr};
    MLP iou_head{nullptr};
    // high-resolution branch
    torch::nn::ConvTranspose2d hr_up1{nullptr}, hr_up2{nullptr};
    LayerNorm2d hr_up_norm{nullptr};
    torch::nn::ModuleList hr_refine;
    MLP hr_hypernet{nullptr};
    bool use_hr;
};
TORCH_MODULE(SDecoder);

// ---------------------------------------------------------------------------
// H-Decoder (word / text-line / paragraph)
// ---------------------------------------------------------------------------

/// Batched hierarchical prediction for K point prompts of one image.
struct HierOutput {
    torch::Tensor word_lr;   // [K, L, L]
    torch::Tensor word_hr;   // [K, W, W]
    torch::Tensor line;      // [K, L, L]
    torch::Tensor para;      // [K, L, L]
    torch::Tensor iou;       // [K, 3] in [0,1]: word (unsupervised), line, para
    torch::Tensor features_lr;  // [K, C/8, L, L]
    torch::Tensor tokens;       // [K, 3, C] sliced output tokens, word/line/para order

    int64_t size() const { return line.defined() ? line.size(0) : 0; }
};

/// One row of a HierOutput with plain scalars for the scores.
struct HierPrediction {
    torch::Tensor word_kernel_lr, word_kernel_hr, line, para;
    float iou_line = 0.f;
    float iou_para = 0.f;
};

struct HDecoderImpl : torch::nn::Module {
    explicit HDecoderImpl(const ScaleProfile& profile);

    /// embedding [1, C, h, w], image_pe [1, C, h, w], dense [1, C, h, w],
    /// point tokens [K, n_p, C]
    HierOutput forward(const torch::Tensor& embedding, const torch::Tensor& image_pe,
                       const torch::Tensor& dense, const torch::Tensor& point_tokens);

    ScaleProfile profile;
    TwoWayTransformer transformer{nullptr};
    torch::Tensor iou_token;      // [1, C]
    torch::Tensor mask_tokens;    // [4, C]
    torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr};
    LayerNorm2d up_norm{nullptr};
    torch::nn::ModuleList hypernets;   // one per mask token
    MLP iou_head{nullptr};
    torch::nn::Conv2d word_reduce{nullptr};
    torch::nn::ModuleList word_refine;
    MLP word_hypernet{nullptr};
};
TORCH_MODULE(HDecoder);

/// Split a batched output into per-point rows.
std::vector<HierPrediction> split_predictions(const HierOutput& out);

// ---------------------------------------------------------------------------
// Whole model
// ---------------------------------------------------------------------------

struct ModelOptions {
    bool use_token_decoder = true;
    TokenSource token_source = TokenSource::SpatialAttention;
    bool use_hr = true;           // S-Decoder HR branch
};

struct HiSamImpl : torch::nn::Module {
    explicit HiSamImpl(const ScaleProfile& profile, ModelOptions options = {});

    /// Normalized images [B, 3, S, S] -> embeddings [B, C, h, w]
    torch::Tensor embed(const torch::Tensor& images);
    PixelTextOutput segment_text(const torch::Tensor& embedding);
    /// embedding [1, C, h, w], points [K, 2] in input pixels.
    HierOutput decode_points(const torch::Tensor& embedding, const torch::Tensor& points);

    /// Parameters that receive gradient: adapters, self-prompting, both decoders.
    std::vector<std::pair<std::string, torch::Tensor>> trainable_parameters() const;
    /// Frozen backbone and prompt encoder parameters/buffers.
    std::vector<std::pair<std::string, torch::Tensor>> frozen_parameters() const;

    ScaleProfile profile;
    ModelOptions options;
    ImageEncoder encoder{nullptr};
    PromptEncoder prompt_encoder{nullptr};
    SelfPrompt self_prompt{nullptr};
    SDecoder s_decoder{nullptr};
    HDecoder h_decoder{nullptr};

    /// Call counters for pipeline instrumentation.
    mutable std::atomic<int64_t> s_decoder_calls{0};
    mutable std::atomic<int64_t> h_decoder_calls{0};
    mutable std::atomic<int64_t> encoder_calls{0};
};
TORCH_MODULE(HiSam);

/// True for parameter names that belong to the trainable set.
bool is_trainable_name(const std::string& name);

/// Apply the frozen/trainable split to requires_grad flags.
void apply_freeze(HiSamImpl& model);

/// Per-channel pixel statistics used to normalize RGB input (0..255 scale).
struct PixelStats {
    std::array<float, 3> mean{123.675f, 116.28f, 103.53f};
    std::array<float, 3> stddev{58.395f, 57.12f, 57.375f};
};

/// uint8 HWC RGB buffer of side `size` -> normalized [1, 3, size, size].
/// Throws ValidationError on non-finite values, ConfigError on size mismatch.
torch::Tensor normalize_image(const torch::Tensor& rgb_hwc_u8, const ScaleProfile& profile,
                              const PixelStats& stats = {});

/// Bilinear upsampling of logits [.., y, x] to size x size.
torch::Tensor resize_logits(const torch::Tensor& logits, int64_t size);

/// Bilinear interpolation to `size` then threshold (logit > threshold).
torch::Tensor binarize(const torch::Tensor& logits, int64_t size, double threshold = 0.0);

/// Analytic multiply-accumulate count of a forward pass, per component.
struct FlopReport {
    double encoder = 0, self_prompt = 0, s_decoder_lr = 0, s_decoder_hr = 0;
    double total() const { return encoder + self_prompt + s_decoder_lr + s_decoder_hr; }
};
FlopReport count_text_flops(const ScaleProfile& profile);

} // namespace hisam
