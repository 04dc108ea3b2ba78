// SPDX-License-Identifier: Apache-2.0
//
// Matrix NMS with the linear decay kernel. Every candidate's score decays by
// its overlap with higher-scored candidates, compensated by how suppressed
// those candidates are themselves.
#pragma once

#include <span>
#include <vector>

#include "hisam/mask.hpp"

namespace hisam {

/// Decayed scores for candidates given a K x K row-major IoU matrix.
/// Output is indexed like `scores`.
std::vector<double> matrix_nms_scores(std::span<const double> iou, std::span<const double> scores);

/// Indices whose decayed score is >= thr, in descending score order
/// (ties keep input order).
std::vector<size_t> matrix_nms(std::span<const BinaryMask> masks, std::span<const double> scores, double thr = 0.5);
std::vector<size_t> matrix_nms(std::span<const double> iou, std::span<const double> scores, double thr = 0.5);

/// Descending-score order with stable ties.
std::vector<size_t> score_order(std::span<const double> scores);

} // namespace hisam

namespace hisam {

struct LineSelectStats {
    size_t candidates = 0;
    size_t after_filter = 0;   // passed the predicted-IoU filter; the only ones NMS sees
    size_t after_nms = 0;
};

/// Drop candidates with score < iou_thr, then matrix NMS over the rest.
/// Returns original indices in descending score order.
std::vector<size_t> filter_then_nms(std::span<const BinaryMask> masks, std::span<const double> scores,
                                    double iou_thr = 0.5, double nms_thr = 0.5, LineSelectStats* stats = nullptr);

} // namespace hisam
