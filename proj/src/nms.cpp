// SPDX-License-Identifier: Apache-2.0
#include "hisam/nms.hpp"

#include <algorithm>
#include <numeric>

#include "hisam/errors.hpp"

namespace hisam {

std::vector<size_t> score_order(std::span<const double> scores)
{
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<double> matrix_nms_scores(std::span<const double> iou, std::span<const double> scores)
{
    const size_t k = scores.size();
    if (iou.size() != k * k)
        throw ValidationError("IoU matrix does not match the score count");
    const auto order = score_order(scores);
    auto at = [&](size_t a, size_t b) { return iou[order[a] * k + order[b]]; };

    // compensation: the largest IoU of each candidate with any higher-scored one
    std::vector<double> comp(k, 0.0);
    for (size_t j = 0; j < k; ++j)
        for (size_t i = 0; i < j; ++i)
            comp[j] = std::max(comp[j], at(i, j));

    std::vector<double> decayed(k, 0.0);
    for (size_t j = 0; j < k; ++j) {
        double decay = 1.0;
        for (size_t i = 0; i < j; ++i) {
            const double num = 1.0 - at(i, j);
            const double den = 1.0 - comp[i];
            if (den <= 0.0)
                continue;   // x/0 never lowers the minimum; 0/0 is skipped
            decay = std::min(decay, num / den);
        }
        decayed[order[j]] = scores[order[j]] * decay;
    }
    return decayed;
}

std::vector<size_t> matrix_nms(std::span<const double> iou, std::span<const double> scores, double thr)
{
    const auto decayed = matrix_nms_scores(iou, scores);
    std::vector<size_t> keep;
    for (size_t idx : score_order(scores))
        if (decayed[idx] >= thr)
            keep.push_back(idx);
    return keep;
}

std::vector<size_t> matrix_nms(std::span<const BinaryMask> masks, std::span<const double> scores, double thr)
{
    if (masks.size() != scores.size())
        throw ValidationError("matrix_nms: masks and scores differ in length");
    const auto iou = pairwise_iou(masks);
    return matrix_nms(iou, scores, thr);
}

} // namespace hisam

namespace hisam {

std::vector<size_t> filter_then_nms(std::span<const BinaryMask> masks, std::span<const double> scores,
                                    double iou_thr, double nms_thr, LineSelectStats* stats)
{
    if (masks.size() != scores.size())
        throw ValidationError("filter_then_nms: masks and scores differ in length");
    std::vector<size_t> passed;
    for (size_t i = 0; i < scores.size(); ++i)
        if (scores[i] >= iou_thr)
            passed.push_back(i);
    std::vector<BinaryMask> kept_masks;
    std::vector<double> kept_scores;
    for (size_t i : passed) {
        kept_masks.push_back(masks[i]);
        kept_scores.push_back(scores[i]);
    }
    std::vector<size_t> keep;
    for (size_t k : matrix_nms(kept_masks, kept_scores, nms_thr))
        keep.push_back(passed[k]);
    if (stats)
        *stats = {masks.size(), passed.size(), keep.size()};
    return keep;
}

} // namespace hisam
