// SPDX-License-Identifier: Apache-2.0
//
// Automatic mask generation (AMG), single-click promptable segmentation (PS)
// and tiled pixel-text inference for large images.
#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "hisam/kernels.hpp"
#include "hisam/model.hpp"
#include "hisam/nms.hpp"
#include "hisam/prediction.hpp"

namespace hisam {

struct AmgConfig {
    int points = 1500;
    int batch = 100;
    double iou_thr = 0.5;       // drop lines with predicted IoU below this
    double nms_thr = 0.5;
    double cluster_thr = 0.5;
    bool hr_text = true;        // sample points from the HR pixel-text logits
    bool hr_words = true;       // expand kernels from the HR word logits
    bool para_nms = false;      // additional matrix NMS over paragraph masks
    double unclip = kUnclipRatio;
    bool sliding_window = false;
    int window = 512;
    int stride = 384;
    uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const AmgConfig& c);
void from_json(const nlohmann::json& j, AmgConfig& c);

/// Uniform over foreground pixels; without replacement when the foreground
/// has at least `count` pixels. Points are pixel coordinates (x, y).
std::vector<cv::Point> sample_foreground_points(const BinaryMask& mask, int count, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Sliding window
// ---------------------------------------------------------------------------

/// Per-window pixel-text logits: RGB crop (window x window) -> CV_32F logits
/// of the same size.
using LogitFn = std::function<cv::Mat(const cv::Mat& crop)>;

/// Window origins over an image padded to cover it: the padded side is
/// window + ceil(max(0, side - window) / stride) * stride.
std::vector<cv::Rect> window_grid(int width, int height, int window, int stride);

/// Number of windows covering each pixel of the (unpadded) image, CV_32S.
cv::Mat coverage_count(int width, int height, int window, int stride);

/// Reflect-pad, run every window, average overlapping logits and crop back.
cv::Mat sliding_window_logits(const cv::Mat& rgb, const LogitFn& fn, int window = 512, int stride = 384);
BinaryMask sliding_window_segment(const cv::Mat& rgb, const LogitFn& fn, int window = 512, int stride = 384);

/// Model-backed LogitFn: resize the crop to the input size, run the
/// S-Decoder and resize the (HR, when enabled) logits back.
LogitFn model_logit_fn(HiSam model, bool use_hr = true);

// ---------------------------------------------------------------------------
// Model pipelines
// ---------------------------------------------------------------------------

/// Encoder forward without gradient: [1, C, h, w].
torch::Tensor embed_image(HiSam& model, const cv::Mat& rgb);

/// Bilinear upsampling of [K, y, x] logits to height x width.
torch::Tensor upsample_logits(const torch::Tensor& logits, int height, int width);
/// logits [y, x] > threshold as a mask.
BinaryMask logits_to_mask(const torch::Tensor& logits, double threshold = 0.0);

/// Pixel-text mask at image resolution from a cached embedding.
BinaryMask segment_pixel_text(HiSam& model, const torch::Tensor& embedding, int width, int height,
                              bool use_hr = true);

struct AmgStats {
    LineSelectStats lines;
    size_t decoded = 0;
    int batches = 0;
};

/// Full AMG on an RGB image of any size.
AmgResult amg(HiSam& model, const cv::Mat& rgb, const AmgConfig& cfg, const std::string& image_id = "",
              AmgStats* stats = nullptr);

/// AMG stages after point sampling, for a cached embedding. Points are in
/// image pixels.
AmgResult amg_from_points(HiSam& model, const torch::Tensor& embedding, const BinaryMask& pixel_text,
                          const std::vector<cv::Point>& points, const AmgConfig& cfg, AmgStats* stats = nullptr);

struct PromptResult {
    bool empty = true;                 // no word under or near the click
    std::optional<WordInstance> word;
    std::vector<WordInstance> line_words;
    BinaryMask line;
    BinaryMask paragraph;
    double line_score = 0;
    double para_score = 0;
};

/// Single click (image pixels) on a cached embedding; only the prompt
/// encoder and the H-Decoder run. Throws ValidationError outside the image.
PromptResult promptable_segment(HiSam& model, const torch::Tensor& embedding, cv::Point2d click, int width,
                                int height, double unclip = kUnclipRatio);

nlohmann::ordered_json prompt_result_to_json(const PromptResult& r);

/// Draft pixel-text layer by sliding-window inference, flagged unreviewed.
AnnotationTree autolabel_pixel_text(HiSam& model, const cv::Mat& rgb, const std::string& image_id, int window = 512,
                                    int stride = 384);

} // namespace hisam
