// SPDX-License-Identifier: Apache-2.0
//
// Pixel-level foreground IoU / F-score and instance-level panoptic quality
// and AP over IoU thresholds.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "hisam/data.hpp"
#include "hisam/mask.hpp"
#include "hisam/prediction.hpp"

namespace hisam {

/// Global pixel tally accumulated over a dataset.
struct PixelTally {
    int64_t tp = 0, fp = 0, fn = 0;

    void add(const BinaryMask& pred, const BinaryMask& gt);
    double iou() const;
    double precision() const;
    double recall() const;
    double fscore() const;
};

double fg_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);
double fg_fscore(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);

struct InstanceEvalReport {
    double pq = 0, f = 0, p = 0, r = 0, t = 0;
    int64_t tp = 0, fp = 0, fn = 0;
    std::vector<double> matched_ious;

    /// Add counts of another report and recompute the ratios.
    void merge(const InstanceEvalReport& other);
    /// Recompute pq/f/p/r/t from the counts. P is 0 without predictions,
    /// R is 0 without ground truth.
    void finalize();
    nlohmann::ordered_json to_json() const;
};

struct PanopticOptions {
    double match_iou = 0.5;          // a pair matches when IoU > match_iou
    double dont_care_overlap = 0.5;  // unmatched preds covered more than this by don't-care GT are ignored
};

/// One image. dont_care is per GT (empty span = all GT count).
InstanceEvalReport panoptic_eval(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
                                 std::span<const uint8_t> dont_care = {}, const PanopticOptions& opt = {});

struct ApReport {
    double ap = 0, ap50 = 0, ap75 = 0;
    std::vector<double> per_threshold;   // thresholds 0.50, 0.55, ..., 0.95
    nlohmann::ordered_json to_json() const;
};

/// IoU thresholds 0.50:0.05:0.95.
std::vector<double> ap_thresholds();

/// 101-point interpolated AP from detections (score, is_tp) and the GT count.
double interpolated_ap(std::vector<std::pair<double, bool>> detections, int64_t num_gt);

/// AP accumulated over images. A detection is a true positive at threshold
/// t when its IoU with an unmatched GT is strictly greater than t.
class ApAccumulator {
public:
    void add_image(std::span<const BinaryMask> preds, std::span<const double> scores,
                   std::span<const BinaryMask> gts, std::span<const uint8_t> dont_care = {});
    ApReport compute() const;

private:
    struct Image {
        std::vector<double> scores;
        std::vector<double> iou;          // preds x gts, row-major
        std::vector<double> dc_overlap;   // per pred: fraction covered by don't-care GT
        std::vector<uint8_t> dont_care;
        size_t num_gt = 0;
    };
    std::vector<Image> images_;
};

/// Paragraph entities are unions of member word masks (falling back to the
/// line masks for clusters without words); GT paragraphs likewise.
InstanceEvalReport layout_eval(const AmgResult& pred, const AnnotationTree& gt);

/// All metric families over a dataset.
class Evaluator {
public:
    void add(const AmgResult& pred, const AnnotationTree& gt);
    nlohmann::ordered_json report() const;

    PixelTally text;
    InstanceEvalReport word, line, paragraph, layout;
    ApAccumulator word_ap, line_ap, paragraph_ap;
    int images = 0;
};

} // namespace hisam
