// SPDX-License-Identifier: Apache-2.0
//
// Word kernels: shrunken word cores for supervision, and polygon offsetting
// to grow predicted cores back to word extent.
#pragma once

#include <optional>
#include <vector>

#include "hisam/geometry.hpp"
#include "hisam/mask.hpp"

namespace hisam {

inline constexpr double kShrinkRatio = 0.4;
inline constexpr double kUnclipRatio = 1.5;

struct WordInstance {
    Polygon polygon;   // input-image pixels, corner space
    BinaryMask mask;
    double score = 0.0;
};

/// D = A (1 - r^2) / L
double shrink_distance(const Polygon& poly, double ratio = kShrinkRatio);
/// D = A r / L
double unclip_distance(const Polygon& poly, double ratio = kUnclipRatio);

/// Inward offset of a word polygon by shrink_distance. Returns an empty
/// polygon when the word is too thin to keep a core.
Polygon shrink_word_labels(const Polygon& word, double ratio = kShrinkRatio);

/// Grow a polygon outward by unclip_distance; the largest piece is kept.
Polygon unclip_polygon(const Polygon& kernel, double ratio = kUnclipRatio);

/// Connected components of a kernel mask, traced, simplified and unclipped.
/// The mask is at input-image resolution; components below 4 px are dropped.
std::vector<WordInstance> expand_word_kernels(const BinaryMask& kernel_mask, double ratio = kUnclipRatio,
                                              double tolerance = 2.0);

/// Index of the instance containing the click, else of the one with the
/// nearest boundary. Ties go to the lower index; nullopt for an empty list.
std::optional<size_t> select_clicked_word(cv::Point2d click, const std::vector<WordInstance>& instances);

} // namespace hisam
