// SPDX-License-Identifier: Apache-2.0
#include "hisam/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "hisam/errors.hpp"
#include "hisam/nms.hpp"

using ojson = nlohmann::ordered_json;

namespace hisam {

void PixelTally::add(const BinaryMask& pred, const BinaryMask& gt)
{
    if (!pred.same_shape(gt))
        throw ValidationError("prediction and ground truth differ in resolution");
    const auto inter = intersection_area(pred, gt);
    tp += inter;
    fp += pred.area() - inter;
    fn += gt.area() - inter;
}

double PixelTally::iou() const
{
    const auto u = tp + fp + fn;
    return u ? double(tp) / double(u) : 0.0;
}

double PixelTally::precision() const { return tp + fp ? double(tp) / double(tp + fp) : 0.0; }
double PixelTally::recall() const { return tp + fn ? double(tp) / double(tp + fn) : 0.0; }

double PixelTally::fscore() const
{
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

namespace {

PixelTally tally(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts)
{
    if (preds.size() != gts.size())
        throw ValidationError("prediction and ground-truth counts differ");
    PixelTally t;
    for (size_t i = 0; i < preds.size(); ++i)
        t.add(preds[i], gts[i]);
    return t;
}

void check_shapes(std::span<const BinaryMask> a, std::span<const BinaryMask> b)
{
    const BinaryMask* ref = !a.empty() ? &a[0] : (!b.empty() ? &b[0] : nullptr);
    if (!ref)
        return;
    for (const auto& m : a)
        if (!m.same_shape(*ref))
            throw ValidationError("instance masks differ in resolution");
    for (const auto& m : b)
        if (!m.same_shape(*ref))
            throw ValidationError("instance masks differ in resolution");
}

/// preds x gts IoU, row-major.
std::vector<double> cross_iou(const std::vector<PackedMask>& p, const std::vector<PackedMask>& g)
{
    std::vector<double> iou(p.size() * g.size(), 0.0);
    for (size_t i = 0; i < p.size(); ++i)
        for (size_t j = 0; j < g.size(); ++j) {
            const auto inter = p[i].intersect(g[j]);
            const auto uni = p[i].area() + g[j].area() - inter;
            iou[i * g.size() + j] = uni ? double(inter) / double(uni) : 0.0;
        }
    return iou;
}

/// Per prediction: the fraction of its pixels inside the union of don't-care GT.
std::vector<double> dont_care_overlap(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
                                      std::span<const uint8_t> dont_care)
{
    std::vector<double> out(preds.size(), 0.0);
    if (preds.empty() || dont_care.empty() ||
        std::none_of(dont_care.begin(), dont_care.end(), [](uint8_t v) { return v != 0; }))
        return out;
    BinaryMask dc(preds[0].width(), preds[0].height());
    for (size_t j = 0; j < gts.size(); ++j)
        if (dont_care[j])
            dc |= gts[j];
    const PackedMask packed(dc);
    for (size_t i = 0; i < preds.size(); ++i) {
        const PackedMask p(preds[i]);
        out[i] = p.area() ? double(p.intersect(packed)) / double(p.area()) : 0.0;
    }
    return out;
}

std::vector<PackedMask> pack(std::span<const BinaryMask> masks)
{
    std::vector<PackedMask> out;
    out.reserve(masks.size());
    for (const auto& m : masks)
        out.emplace_back(m);
    return out;
}

} // namespace

double fg_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts)
{
    return tally(preds, gts).iou();
}

double fg_fscore(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts)
{
    return tally(preds, gts).fscore();
}

void InstanceEvalReport::merge(const InstanceEvalReport& other)
{
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    matched_ious.insert(matched_ious.end(), other.matched_ious.begin(), other.matched_ious.end());
    finalize();
}

void InstanceEvalReport::finalize()
{
    p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    f = tp ? double(tp) / (tp + 0.5 * fp + 0.5 * fn) : 0.0;
    t = matched_ious.empty() ? 0.0
                             : std::accumulate(matched_ious.begin(), matched_ious.end(), 0.0) / matched_ious.size();
    pq = f * t;
}

ojson InstanceEvalReport::to_json() const
{
    return {{"pq", pq}, {"f", f}, {"p", p}, {"r", r}, {"t", t}, {"tp", tp}, {"fp", fp}, {"fn", fn}};
}

InstanceEvalReport panoptic_eval(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
                                 std::span<const uint8_t> dont_care, const PanopticOptions& opt)
{
    check_shapes(preds, gts);
    if (!dont_care.empty() && dont_care.size() != gts.size())
        throw ValidationError("don't-care flags must match the GT count");
    auto is_dc = [&](size_t j) { return !dont_care.empty() && dont_care[j]; };

    const auto pp = pack(preds), gp = pack(gts);
    const auto iou = cross_iou(pp, gp);
    const size_t ng = gts.size();

    struct Pair {
        double iou;
        size_t pred, gt;
    };
    std::vector<Pair> pairs;
    for (size_t i = 0; i < preds.size(); ++i)
        for (size_t j = 0; j < ng; ++j)
            if (!is_dc(j) && iou[i * ng + j] > opt.match_iou)
                pairs.push_back({iou[i * ng + j], i, j});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });

    InstanceEvalReport rep;
    std::vector<uint8_t> pred_used(preds.size(), 0), gt_used(ng, 0);
    for (const auto& pr : pairs) {
        if (pred_used[pr.pred] || gt_used[pr.gt])
            continue;
        pred_used[pr.pred] = gt_used[pr.gt] = 1;
        rep.tp++;
        rep.matched_ious.push_back(pr.iou);
    }
    const auto dc_frac = dont_care_overlap(preds, gts, dont_care);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (pred_used[i])
            continue;
        bool ignored = dc_frac[i] > opt.dont_care_overlap;
        for (size_t j = 0; j < ng && !ignored; ++j)
            ignored = is_dc(j) && iou[i * ng + j] > opt.match_iou;
        if (!ignored)
            rep.fp++;
    }
    for (size_t j = 0; j < ng; ++j)
        if (!is_dc(j) && !gt_used[j])
            rep.fn++;
    rep.finalize();
    return rep;
}

std::vector<double> ap_thresholds()
{
    std::vector<double> t;
    for (int i = 0; i < 10; ++i)
        t.push_back((50 + 5 * i) / 100.0);
    return t;
}

double interpolated_ap(std::vector<std::pair<double, bool>> detections, int64_t num_gt)
{
    if (num_gt <= 0)
        return 0.0;
    std::stable_sort(detections.begin(), detections.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> precision, recall;
    int64_t tp = 0, fp = 0;
    for (const auto& [score, hit] : detections) {
        (hit ? tp : fp)++;
        precision.push_back(double(tp) / double(tp + fp));
        recall.push_back(double(tp) / double(num_gt));
    }
    // precision envelope
    for (size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end())
            sum += precision[it - recall.begin()];
    }
    return sum / 101.0;
}

ojson ApReport::to_json() const
{
    return {{"ap", ap}, {"ap50", ap50}, {"ap75", ap75}, {"per_threshold", per_threshold}};
}

void ApAccumulator::add_image(std::span<const BinaryMask> preds, std::span<const double> scores,
                              std::span<const BinaryMask> gts, std::span<const uint8_t> dont_care)
{
    check_shapes(preds, gts);
    if (preds.size() != scores.size())
        throw ValidationError("AP: scores must match predictions");
    if (!dont_care.empty() && dont_care.size() != gts.size())
        throw ValidationError("don't-care flags must match the GT count");
    Image img;
    img.scores.assign(scores.begin(), scores.end());
    img.iou = cross_iou(pack(preds), pack(gts));
    img.dc_overlap = dont_care_overlap(preds, gts, dont_care);
    img.dont_care.assign(gts.size(), 0);
    if (!dont_care.empty())
        std::copy(dont_care.begin(), dont_care.end(), img.dont_care.begin());
    img.num_gt = gts.size();
    images_.push_back(std::move(img));
}

ApReport ApAccumulator::compute() const
{
    ApReport rep;
    const auto thresholds = ap_thresholds();
    for (double thr : thresholds) {
        std::vector<std::pair<double, bool>> dets;
        int64_t num_gt = 0;
        for (const auto& img : images_) {
            const size_t ng = img.num_gt;
            for (size_t j = 0; j < ng; ++j)
                num_gt += img.dont_care[j] ? 0 : 1;
            std::vector<uint8_t> used(ng, 0);
            for (size_t i : score_order(img.scores)) {
                double best = thr;
                int best_j = -1;
                bool hits_dc = false;
                for (size_t j = 0; j < ng; ++j) {
                    const double v = img.iou[i * ng + j];
                    if (img.dont_care[j]) {
                        hits_dc = hits_dc || v > thr;
                        continue;
                    }
                    if (!used[j] && v > best) {
                        best = v;
                        best_j = static_cast<int>(j);
                    }
                }
                if (best_j >= 0) {
                    used[best_j] = 1;
                    dets.emplace_back(img.scores[i], true);
                } else if (!hits_dc && img.dc_overlap[i] <= 0.5) {
                    dets.emplace_back(img.scores[i], false);
                }
            }
        }
        rep.per_threshold.push_back(interpolated_ap(std::move(dets), num_gt));
    }
    rep.ap = std::accumulate(rep.per_threshold.begin(), rep.per_threshold.end(), 0.0) / thresholds.size();
    rep.ap50 = rep.per_threshold[0];
    rep.ap75 = rep.per_threshold[5];
    return rep;
}

namespace {

struct GtInstances {
    std::vector<BinaryMask> masks;
    std::vector<uint8_t> dont_care;
};

GtInstances gt_words(const AnnotationTree& gt)
{
    GtInstances out;
    for (const auto& p : gt.paragraphs)
        for (const auto& l : p.lines)
            for (const auto& w : l.words) {
                out.masks.push_back(rasterize(w.vertices, gt.width, gt.height));
                out.dont_care.push_back(!w.legible);
            }
    return out;
}

GtInstances gt_lines(const AnnotationTree& gt)
{
    GtInstances out;
    for (const auto& ref : enumerate_lines(gt)) {
        out.masks.push_back(line_mask(gt, ref, gt.width, gt.height));
        out.dont_care.push_back(!gt.paragraphs[ref.paragraph].lines[ref.line].legible);
    }
    return out;
}

GtInstances gt_paragraph_polygons(const AnnotationTree& gt)
{
    GtInstances out;
    for (size_t p = 0; p < gt.paragraphs.size(); ++p) {
        out.masks.push_back(paragraph_mask(gt, p, gt.width, gt.height));
        out.dont_care.push_back(!gt.paragraphs[p].legible);
    }
    return out;
}

GtInstances gt_layout(const AnnotationTree& gt)
{
    GtInstances out;
    for (const auto& p : gt.paragraphs) {
        BinaryMask m(gt.width, gt.height);
        bool any_legible = false;
        for (const auto& l : p.lines)
            for (const auto& w : l.words) {
                m |= rasterize(w.vertices, gt.width, gt.height);
                any_legible = any_legible || w.legible;
            }
        if (m.empty())
            continue;
        out.masks.push_back(std::move(m));
        out.dont_care.push_back(!any_legible);
    }
    return out;
}

std::vector<BinaryMask> pred_layout(const AmgResult& pred)
{
    std::vector<BinaryMask> out;
    for (const auto& members : pred.layout.clusters) {
        BinaryMask m(pred.width, pred.height);
        bool has_words = false;
        for (int idx : members)
            for (const auto& w : pred.words[idx]) {
                m |= w.mask;
                has_words = true;
            }
        if (!has_words)
            for (int idx : members)
                m |= pred.lines[idx];
        out.push_back(std::move(m));
    }
    return out;
}

void check_pred(const AmgResult& pred, const AnnotationTree& gt)
{
    if (!pred.aligned())
        throw ValidationError("prediction arrays are not index-aligned");
    if (pred.width != gt.width || pred.height != gt.height)
        throw ValidationError("prediction and ground truth differ in resolution");
}

} // namespace

InstanceEvalReport layout_eval(const AmgResult& pred, const AnnotationTree& gt)
{
    check_pred(pred, gt);
    const auto g = gt_layout(gt);
    const auto p = pred_layout(pred);
    return panoptic_eval(p, g.masks, g.dont_care);
}

void Evaluator::add(const AmgResult& pred, const AnnotationTree& gt)
{
    check_pred(pred, gt);
    ++images;
    text.add(pred.pixel_text, gt.pixel_text ? *gt.pixel_text : words_mask(gt, gt.width, gt.height));

    std::vector<BinaryMask> pw;
    std::vector<double> pw_scores;
    for (const auto& line : pred.words)
        for (const auto& w : line) {
            pw.push_back(w.mask);
            pw_scores.push_back(w.score);
        }
    const auto gw = gt_words(gt);
    word.merge(panoptic_eval(pw, gw.masks, gw.dont_care));
    word_ap.add_image(pw, pw_scores, gw.masks, gw.dont_care);

    const auto gl = gt_lines(gt);
    line.merge(panoptic_eval(pred.lines, gl.masks, gl.dont_care));
    line_ap.add_image(pred.lines, pred.line_scores, gl.masks, gl.dont_care);

    // raw paragraph masks: the highest-scored member of each cluster
    std::vector<BinaryMask> pp;
    std::vector<double> pp_scores;
    for (const auto& members : pred.layout.clusters) {
        if (members.empty())
            continue;
        int best = members[0];
        for (int idx : members)
            if (pred.para_scores[idx] > pred.para_scores[best])
                best = idx;
        pp.push_back(pred.paragraphs[best]);
        pp_scores.push_back(pred.para_scores[best]);
    }
    const auto gp = gt_paragraph_polygons(gt);
    paragraph.merge(panoptic_eval(pp, gp.masks, gp.dont_care));
    paragraph_ap.add_image(pp, pp_scores, gp.masks, gp.dont_care);

    layout.merge(layout_eval(pred, gt));
}

ojson Evaluator::report() const
{
    ojson j;
    j["images"] = images;
    j["pixel_text"] = {{"fg_iou", text.iou()},
                       {"f", text.fscore()},
                       {"p", text.precision()},
                       {"r", text.recall()},
                       {"tp", text.tp},
                       {"fp", text.fp},
                       {"fn", text.fn}};
    auto with_ap = [](const InstanceEvalReport& rep, const ApAccumulator& acc) {
        auto j = rep.to_json();
        j["ap"] = acc.compute().to_json();
        return j;
    };
    j["word"] = with_ap(word, word_ap);
    j["line"] = with_ap(line, line_ap);
    j["paragraph"] = with_ap(paragraph, paragraph_ap);
    j["layout"] = layout.to_json();
    return j;
}

} // namespace hisam
