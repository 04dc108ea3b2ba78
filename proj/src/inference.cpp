// SPDX-License-Identifier: Apache-2.0
#include "hisam/inference.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "hisam/errors.hpp"
#include "hisam/layout.hpp"
#include "hisam/rle.hpp"
#include "hisam/train.hpp"

namespace F = torch::nn::functional;
using ojson = nlohmann::ordered_json;

namespace hisam {

void to_json(nlohmann::json& j, const AmgConfig& c)
{
    j = {{"points", c.points},       {"batch", c.batch},
         {"iou_thr", c.iou_thr},     {"nms_thr", c.nms_thr},
         {"cluster_thr", c.cluster_thr}, {"hr_text", c.hr_text},
         {"hr_words", c.hr_words},   {"para_nms", c.para_nms},
         {"unclip", c.unclip},       {"sliding_window", c.sliding_window},
         {"window", c.window},       {"stride", c.stride},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AmgConfig& c)
{
    AmgConfig d;
    c.points = j.value("points", d.points);
    c.batch = j.value("batch", d.batch);
    c.iou_thr = j.value("iou_thr", d.iou_thr);
    c.nms_thr = j.value("nms_thr", d.nms_thr);
    c.cluster_thr = j.value("cluster_thr", d.cluster_thr);
    c.hr_text = j.value("hr_text", d.hr_text);
    c.hr_words = j.value("hr_words", d.hr_words);
    c.para_nms = j.value("para_nms", d.para_nms);
    c.unclip = j.value("unclip", d.unclip);
    c.sliding_window = j.value("sliding_window", d.sliding_window);
    c.window = j.value("window", d.window);
    c.stride = j.value("stride", d.stride);
    c.seed = j.value("seed", d.seed);
    if (c.points < 1 || c.batch < 1 || c.window < 1 || c.stride < 1 || c.stride > c.window)
        throw ConfigError("invalid AMG configuration");
}

std::vector<cv::Point> sample_foreground_points(const BinaryMask& mask, int count, std::mt19937_64& rng)
{
    if (count < 1)
        throw ConfigError("point count must be at least 1");
    std::vector<cv::Point> fg;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y))
                fg.emplace_back(x, y);
    if (fg.empty())
        return {};
    std::vector<cv::Point> out;
    if (fg.size() >= size_t(count)) {
        // partial Fisher-Yates: the first `count` entries are a uniform subset
        for (int i = 0; i < count; ++i) {
            std::uniform_int_distribution<size_t> pick(i, fg.size() - 1);
            std::swap(fg[i], fg[pick(rng)]);
        }
        out.assign(fg.begin(), fg.begin() + count);
    } else {
        std::uniform_int_distribution<size_t> pick(0, fg.size() - 1);
        for (int i = 0; i < count; ++i)
            out.push_back(fg[pick(rng)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sliding window
// ---------------------------------------------------------------------------

namespace {

int padded_side(int side, int window, int stride)
{
    const int extra = std::max(0, side - window);
    return window + (extra + stride - 1) / stride * stride;
}

} // namespace

std::vector<cv::Rect> window_grid(int width, int height, int window, int stride)
{
    if (window < 1 || stride < 1 || stride > window)
        throw ConfigError("window and stride must satisfy 1 <= stride <= window");
    const int pw = padded_side(width, window, stride), ph = padded_side(height, window, stride);
    std::vector<cv::Rect> out;
    for (int y = 0; y + window <= ph; y += stride)
        for (int x = 0; x + window <= pw; x += stride)
            out.emplace_back(x, y, window, window);
    return out;
}

cv::Mat coverage_count(int width, int height, int window, int stride)
{
    const int pw = padded_side(width, window, stride), ph = padded_side(height, window, stride);
    cv::Mat count = cv::Mat::zeros(ph, pw, CV_32S);
    for (const auto& r : window_grid(width, height, window, stride))
        count(r) += 1;
    return count(cv::Rect(0, 0, width, height)).clone();
}

cv::Mat sliding_window_logits(const cv::Mat& rgb, const LogitFn& fn, int window, int stride)
{
    if (rgb.empty())
        throw ValidationError("empty image");
    const int pw = padded_side(rgb.cols, window, stride), ph = padded_side(rgb.rows, window, stride);
    cv::Mat padded;
    cv::copyMakeBorder(rgb, padded, 0, ph - rgb.rows, 0, pw - rgb.cols, cv::BORDER_REFLECT_101);
    cv::Mat sum = cv::Mat::zeros(ph, pw, CV_32F);
    cv::Mat count = cv::Mat::zeros(ph, pw, CV_32F);
    for (const auto& r : window_grid(rgb.cols, rgb.rows, window, stride)) {
        cv::Mat logits = fn(padded(r).clone());
        if (logits.type() != CV_32F || logits.size() != r.size())
            throw ValidationError("window logits must be CV_32F at the window size");
        sum(r) += logits;
        count(r) += 1.0f;
    }
    cv::Mat avg = sum / count;
    return avg(cv::Rect(0, 0, rgb.cols, rgb.rows)).clone();
}

BinaryMask sliding_window_segment(const cv::Mat& rgb, const LogitFn& fn, int window, int stride)
{
    return BinaryMask::from_mat(sliding_window_logits(rgb, fn, window, stride) > 0.0f);
}

// ---------------------------------------------------------------------------
// Model pipelines
// ---------------------------------------------------------------------------

torch::Tensor embed_image(HiSam& model, const cv::Mat& rgb)
{
    torch::NoGradGuard guard;
    return model->embed(image_to_input(rgb, model->profile));
}

torch::Tensor upsample_logits(const torch::Tensor& logits, int height, int width)
{
    auto x = logits.dim() == 2 ? logits.unsqueeze(0) : logits;
    if (x.size(-2) == height && x.size(-1) == width)
        return logits;
    auto up = F::interpolate(x.unsqueeze(1), F::InterpolateFuncOptions()
                                                 .size(std::vector<int64_t>{height, width})
                                                 .mode(torch::kBilinear)
                                                 .align_corners(false))
                  .squeeze(1);
    return logits.dim() == 2 ? up.squeeze(0) : up;
}

BinaryMask logits_to_mask(const torch::Tensor& logits, double threshold)
{
    auto m = (logits > threshold).to(torch::kUInt8).contiguous();
    BinaryMask out(static_cast<int>(m.size(1)), static_cast<int>(m.size(0)));
    std::copy_n(m.data_ptr<uint8_t>(), m.numel(), out.data().begin());
    return out;
}

namespace {

torch::Tensor text_logits(HiSam& model, const torch::Tensor& embedding, bool use_hr)
{
    torch::NoGradGuard guard;
    auto out = model->segment_text(embedding);
    return (use_hr && out.m_hr.defined() ? out.m_hr : out.m_lr)[0];
}

cv::Mat tensor_to_mat(const torch::Tensor& t)
{
    auto c = t.to(torch::kFloat).contiguous();
    return cv::Mat(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), CV_32F, c.data_ptr<float>()).clone();
}

} // namespace

BinaryMask segment_pixel_text(HiSam& model, const torch::Tensor& embedding, int width, int height, bool use_hr)
{
    torch::NoGradGuard guard;
    return logits_to_mask(upsample_logits(text_logits(model, embedding, use_hr), height, width));
}

LogitFn model_logit_fn(HiSam model, bool use_hr)
{
    return [model, use_hr](const cv::Mat& crop) mutable {
        torch::NoGradGuard guard;
        const auto emb = embed_image(model, crop);
        return tensor_to_mat(upsample_logits(text_logits(model, emb, use_hr), crop.rows, crop.cols));
    };
}

AmgResult amg_from_points(HiSam& model, const torch::Tensor& embedding, const BinaryMask& pixel_text,
                          const std::vector<cv::Point>& points, const AmgConfig& cfg, AmgStats* stats)
{
    torch::NoGradGuard guard;
    const int w = pixel_text.width(), h = pixel_text.height();
    const int size = model->profile.input_size;
    const double sx = double(size) / w, sy = double(size) / h;

    AmgResult res;
    res.width = w;
    res.height = h;
    res.pixel_text = pixel_text;
    AmgStats local;

    // decode in batches, keeping only what passes the IoU filter later on
    std::vector<torch::Tensor> line_logits, para_logits, word_logits;
    std::vector<BinaryMask> line_lr;
    std::vector<double> line_scores, para_scores;
    for (size_t start = 0; start < points.size(); start += cfg.batch) {
        const size_t n = std::min(points.size() - start, size_t(cfg.batch));
        auto pts = torch::empty({int64_t(n), 2});
        auto acc = pts.accessor<float, 2>();
        for (size_t i = 0; i < n; ++i) {
            acc[i][0] = float((points[start + i].x + 0.5) * sx);
            acc[i][1] = float((points[start + i].y + 0.5) * sy);
        }
        const auto out = model->decode_points(embedding, pts);
        ++local.batches;
        for (size_t i = 0; i < n; ++i) {
            line_scores.push_back(out.iou[i][1].item<double>());
            para_scores.push_back(out.iou[i][2].item<double>());
            line_lr.push_back(logits_to_mask(out.line[i]));
            line_logits.push_back(out.line[i].clone());
            para_logits.push_back(out.para[i].clone());
            word_logits.push_back((cfg.hr_words ? out.word_hr[i] : out.word_lr[i]).clone());
        }
    }
    local.decoded = line_scores.size();

    auto keep = filter_then_nms(line_lr, line_scores, cfg.iou_thr, cfg.nms_thr, &local.lines);

    if (cfg.para_nms && !keep.empty()) {
        std::vector<BinaryMask> pm;
        std::vector<double> ps;
        for (size_t idx : keep) {
            pm.push_back(logits_to_mask(para_logits[idx]));
            ps.push_back(para_scores[idx]);
        }
        std::vector<size_t> survivors;
        auto kept_para = matrix_nms(pm, ps, cfg.nms_thr);
        std::sort(kept_para.begin(), kept_para.end());
        for (size_t k : kept_para)
            survivors.push_back(keep[k]);
        keep = std::move(survivors);
    }

    std::vector<BinaryMask> para_lr;
    for (size_t idx : keep) {
        res.lines.push_back(logits_to_mask(upsample_logits(line_logits[idx], h, w)));
        res.line_scores.push_back(line_scores[idx]);
        res.paragraphs.push_back(logits_to_mask(upsample_logits(para_logits[idx], h, w)));
        res.para_scores.push_back(para_scores[idx]);
        para_lr.push_back(logits_to_mask(para_logits[idx]));
        auto words = expand_word_kernels(logits_to_mask(upsample_logits(word_logits[idx], h, w)), cfg.unclip);
        for (auto& word : words)
            word.score = line_scores[idx];
        res.words.push_back(std::move(words));
    }
    const auto iou = paragraph_iou_matrix(para_lr);
    res.layout = cluster_paragraphs(iou, para_lr.size(), cfg.cluster_thr);
    if (stats)
        *stats = local;
    return res;
}

AmgResult amg(HiSam& model, const cv::Mat& rgb, const AmgConfig& cfg, const std::string& image_id, AmgStats* stats)
{
    torch::NoGradGuard guard;
    const auto embedding = embed_image(model, rgb);
    BinaryMask text = cfg.sliding_window
                          ? sliding_window_segment(rgb, model_logit_fn(model, cfg.hr_text), cfg.window, cfg.stride)
                          : segment_pixel_text(model, embedding, rgb.cols, rgb.rows, cfg.hr_text);
    std::mt19937_64 rng(cfg.seed);
    const auto points = sample_foreground_points(text, cfg.points, rng);
    auto res = amg_from_points(model, embedding, text, points, cfg, stats);
    res.image_id = image_id;
    return res;
}

PromptResult promptable_segment(HiSam& model, const torch::Tensor& embedding, cv::Point2d click, int width,
                                int height, double unclip)
{
    if (!(click.x >= 0 && click.y >= 0 && click.x < width && click.y < height))
        throw ValidationError("click outside the image");
    torch::NoGradGuard guard;
    const int size = model->profile.input_size;
    auto pts = torch::tensor({float(click.x * size / width), float(click.y * size / height)}).reshape({1, 2});
    const auto out = model->decode_points(embedding, pts);

    PromptResult r;
    r.line = logits_to_mask(upsample_logits(out.line[0], height, width));
    r.paragraph = logits_to_mask(upsample_logits(out.para[0], height, width));
    r.line_score = out.iou[0][1].item<double>();
    r.para_score = out.iou[0][2].item<double>();
    r.line_words = expand_word_kernels(logits_to_mask(upsample_logits(out.word_hr[0], height, width)), unclip);
    for (auto& w : r.line_words)
        w.score = r.line_score;
    if (auto idx = select_clicked_word(click, r.line_words)) {
        r.word = r.line_words[*idx];
        r.empty = false;
    }
    return r;
}

ojson prompt_result_to_json(const PromptResult& r)
{
    ojson j;
    j["empty"] = r.empty;
    if (r.word) {
        ojson poly = ojson::array();
        for (const auto& p : r.word->polygon)
            poly.push_back({p.x, p.y});
        j["word"] = {{"score", r.word->score}, {"polygon", poly}, {"mask", rle_to_json(rle_encode(r.word->mask))}};
    } else {
        j["word"] = nullptr;
    }
    j["line"] = {{"score", r.line_score}, {"mask", rle_to_json(rle_encode(r.line))}};
    j["paragraph"] = {{"score", r.para_score}, {"mask", rle_to_json(rle_encode(r.paragraph))}};
    return j;
}

AnnotationTree autolabel_pixel_text(HiSam& model, const cv::Mat& rgb, const std::string& image_id, int window,
                                    int stride)
{
    AnnotationTree tree;
    tree.image_id = image_id;
    tree.width = rgb.cols;
    tree.height = rgb.rows;
    tree.image = rgb;
    tree.pixel_text = sliding_window_segment(rgb, model_logit_fn(model, true), window, stride);
    tree.set_review(ReviewStatus::Unreviewed);
    return tree;
}

} // namespace hisam
