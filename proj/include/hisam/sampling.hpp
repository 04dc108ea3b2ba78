// SPDX-License-Identifier: Apache-2.0
//
// Training-side data handling: point-prompt sampling with hierarchy targets,
// and geometric/photometric augmentation applied consistently to the image,
// the pixel-text layer and every polygon.
#pragma once

#include <random>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "hisam/data.hpp"
#include "hisam/mask.hpp"

namespace hisam {

struct PromptSample {
    cv::Point2d point;          // input pixels, at a pixel center
    BinaryMask word_target;     // union of word kernels on the prompted line
    BinaryMask line_target;
    BinaryMask para_target;
    bool is_blank = false;
};

/// At most max_lines lines, chosen uniformly without replacement; per line
/// points_per_line points drawn uniformly from (line mask & pixel text).
/// Lines without such pixels are skipped. When no line is eligible a single
/// blank sample at a background pixel is returned. Targets are at the tree's
/// resolution.
std::vector<PromptSample> sample_training_prompts(const AnnotationTree& tree, int max_lines, int points_per_line,
                                                  std::mt19937_64& rng);

/// Union of the shrunken kernels of a line's words.
BinaryMask line_word_kernels(const AnnotationTree& tree, LineRef ref, int width, int height);

struct AugmentConfig {
    bool enabled = false;
    double color_jitter = 0.2;     // max relative brightness/contrast/saturation change
    double max_rotation_deg = 10.0;
    double scale_min = 0.5;
    double scale_max = 2.0;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// One concrete draw of the augmentation.
struct AugmentParams {
    double angle_deg = 0.0;
    double scale = 1.0;
    cv::Point2d shift{0.0, 0.0};
    double brightness = 0.0;   // additive, fraction of 255
    double contrast = 1.0;
    double saturation = 1.0;

    bool is_identity() const;
    /// Corner-space affine map from source to output pixels (output is
    /// `size` x `size`): rotation and scale about the source center, then
    /// the shift.
    cv::Matx23d affine(int src_width, int src_height, int size) const;
};

AugmentParams draw_augment_params(const AugmentConfig& cfg, int size, std::mt19937_64& rng);

/// Apply a draw; the output canvas is size x size. Words leaving the canvas
/// entirely are dropped, as are lines and paragraphs left without words.
AnnotationTree apply_augment(const AnnotationTree& tree, const AugmentParams& params, int size);

/// Convenience: draw and apply, or resize to `size` when disabled.
AnnotationTree augment(const AnnotationTree& tree, const AugmentConfig& cfg, int size, std::mt19937_64& rng);

} // namespace hisam
