// SPDX-License-Identifier: Apache-2.0
#include "hisam/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "hisam/errors.hpp"
#include "hisam/kernels.hpp"

namespace hisam {

BinaryMask line_word_kernels(const AnnotationTree& tree, LineRef ref, int width, int height)
{
    std::vector<Polygon> kernels;
    const double sx = double(width) / tree.width, sy = double(height) / tree.height;
    for (const auto& w : tree.paragraphs.at(ref.paragraph).lines.at(ref.line).words) {
        auto k = shrink_word_labels(scale_polygon(w.vertices, sx, sy));
        if (!k.empty())
            kernels.push_back(std::move(k));
    }
    return rasterize(kernels, width, height);
}

namespace {

std::vector<cv::Point> pixels_of(const BinaryMask& m)
{
    std::vector<cv::Point> pts;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m.at(x, y))
                pts.emplace_back(x, y);
    return pts;
}

} // namespace

std::vector<PromptSample> sample_training_prompts(const AnnotationTree& tree, int max_lines, int points_per_line,
                                                  std::mt19937_64& rng)
{
    if (tree.width <= 0 || tree.height <= 0)
        throw DataError(tree.image_id + ": annotation without a valid size");
    const int w = tree.width, h = tree.height;
    const BinaryMask text = tree.pixel_text ? *tree.pixel_text : words_mask(tree, w, h);
    if (text.width() != w || text.height() != h)
        throw DataError(tree.image_id + ": pixel-text layer size disagrees with the image");

    auto lines = enumerate_lines(tree);
    std::shuffle(lines.begin(), lines.end(), rng);

    std::vector<PromptSample> out;
    int used = 0;
    for (const auto& ref : lines) {
        if (used >= max_lines)
            break;
        const auto& line = tree.paragraphs[ref.paragraph].lines[ref.line];
        if (line.vertices.size() < 3)
            throw DataError(tree.image_id + ": line polygon with fewer than 3 vertices");
        BinaryMask lm = line_mask(tree, ref, w, h);
        BinaryMask fg = lm;
        fg &= text;
        const auto pts = pixels_of(fg);
        if (pts.empty())
            continue;
        ++used;
        const BinaryMask word_t = line_word_kernels(tree, ref, w, h);
        const BinaryMask para_t = paragraph_mask(tree, ref.paragraph, w, h);
        std::uniform_int_distribution<size_t> pick(0, pts.size() - 1);
        for (int k = 0; k < points_per_line; ++k) {
            const auto p = pts[pick(rng)];
            out.push_back({cv::Point2d(p.x + 0.5, p.y + 0.5), word_t, lm, para_t, false});
        }
    }
    if (out.empty()) {
        BinaryMask covered = text;
        for (const auto& ref : enumerate_lines(tree))
            covered |= line_mask(tree, ref, w, h);
        std::vector<cv::Point> bg;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (!covered.at(x, y))
                    bg.emplace_back(x, y);
        cv::Point p(w / 2, h / 2);
        if (!bg.empty())
            p = bg[std::uniform_int_distribution<size_t>(0, bg.size() - 1)(rng)];
        out.push_back({cv::Point2d(p.x + 0.5, p.y + 0.5), BinaryMask(w, h), BinaryMask(w, h), BinaryMask(w, h), true});
    }
    return out;
}

void to_json(nlohmann::json& j, const AugmentConfig& c)
{
    j = {{"enabled", c.enabled},
         {"color_jitter", c.color_jitter},
         {"max_rotation_deg", c.max_rotation_deg},
         {"scale_min", c.scale_min},
         {"scale_max", c.scale_max}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c)
{
    AugmentConfig d;
    c.enabled = j.value("enabled", d.enabled);
    c.color_jitter = j.value("color_jitter", d.color_jitter);
    c.max_rotation_deg = j.value("max_rotation_deg", d.max_rotation_deg);
    c.scale_min = j.value("scale_min", d.scale_min);
    c.scale_max = j.value("scale_max", d.scale_max);
}

bool AugmentParams::is_identity() const
{
    return angle_deg == 0.0 && scale == 1.0 && shift == cv::Point2d(0, 0) && brightness == 0.0 && contrast == 1.0 &&
           saturation == 1.0;
}

cv::Matx23d AugmentParams::affine(int src_width, int src_height, int size) const
{
    // fit the source into the canvas first, then rotate/scale about the center
    const double fit_x = double(size) / src_width, fit_y = double(size) / src_height;
    const double a = angle_deg * CV_PI / 180.0;
    const double c = std::cos(a) * scale, s = std::sin(a) * scale;
    const double cx = size / 2.0, cy = size / 2.0;
    // p' = R S (F p - center) + center + shift, with R rotating counter-clockwise on screen
    cv::Matx23d m;
    m(0, 0) = c * fit_x;
    m(0, 1) = s * fit_y;
    m(1, 0) = -s * fit_x;
    m(1, 1) = c * fit_y;
    m(0, 2) = cx - (c * cx + s * cy) + shift.x;
    m(1, 2) = cy - (-s * cx + c * cy) + shift.y;
    return m;
}

AugmentParams draw_augment_params(const AugmentConfig& cfg, int size, std::mt19937_64& rng)
{
    AugmentParams p;
    if (!cfg.enabled)
        return p;
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    p.angle_deg = cfg.max_rotation_deg > 0 ? uni(-cfg.max_rotation_deg, cfg.max_rotation_deg) : 0.0;
    // log-uniform scale
    p.scale = std::exp(uni(std::log(cfg.scale_min), std::log(cfg.scale_max)));
    const double slack = std::abs(p.scale - 1.0) * size / 2.0;
    p.shift = {std::round(uni(-slack, slack)), std::round(uni(-slack, slack))};
    if (cfg.color_jitter > 0) {
        p.brightness = uni(-cfg.color_jitter, cfg.color_jitter);
        p.contrast = 1.0 + uni(-cfg.color_jitter, cfg.color_jitter);
        p.saturation = 1.0 + uni(-cfg.color_jitter, cfg.color_jitter);
    }
    return p;
}

namespace {

cv::Mat color_jitter(const cv::Mat& rgb, const AugmentParams& p)
{
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3);
    cv::Mat gray;
    cv::cvtColor(f, gray, cv::COLOR_RGB2GRAY);
    cv::Mat gray3;
    cv::cvtColor(gray, gray3, cv::COLOR_GRAY2RGB);
    f = gray3 + (f - gray3) * p.saturation;
    const double mean = cv::mean(gray)[0];
    f = (f - mean) * p.contrast + mean + p.brightness * 255.0;
    cv::Mat out;
    f.convertTo(out, CV_8UC3);
    return out;
}

} // namespace

AnnotationTree apply_augment(const AnnotationTree& tree, const AugmentParams& params, int size)
{
    if (params.is_identity() && tree.width == size && tree.height == size)
        return tree;
    const cv::Matx23d m = params.affine(tree.width, tree.height, size);
    // corner-space map -> OpenCV's center-space map
    cv::Matx23d mc = m;
    mc(0, 2) += 0.5 * (m(0, 0) + m(0, 1)) - 0.5;
    mc(1, 2) += 0.5 * (m(1, 0) + m(1, 1)) - 0.5;

    AnnotationTree out;
    out.image_id = tree.image_id;
    out.width = size;
    out.height = size;
    out.review = tree.review;
    out.review_log = tree.review_log;
    if (!tree.image.empty()) {
        cv::Mat img;
        cv::warpAffine(tree.image, img, cv::Mat(mc), cv::Size(size, size), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                       cv::Scalar(0, 0, 0));
        if (params.brightness != 0.0 || params.contrast != 1.0 || params.saturation != 1.0)
            img = color_jitter(img, params);
        out.image = img;
    }
    if (tree.pixel_text) {
        cv::Mat f, warped;
        tree.pixel_text->view().convertTo(f, CV_32F);
        cv::warpAffine(f, warped, cv::Mat(mc), cv::Size(size, size), cv::INTER_LINEAR, cv::BORDER_CONSTANT, 0);
        out.pixel_text = BinaryMask::from_mat(warped > 0.5f);
    }

    for (const auto& p : tree.paragraphs) {
        Paragraph np;
        np.vertices = transform_polygon(p.vertices, m);
        np.legible = p.legible;
        for (const auto& l : p.lines) {
            Line nl = l;
            nl.vertices = transform_polygon(l.vertices, m);
            nl.words.clear();
            for (const auto& w : l.words) {
                Word nw = w;
                nw.vertices = transform_polygon(w.vertices, m);
                if (rasterize(nw.vertices, size, size).empty())
                    continue;
                nl.words.push_back(std::move(nw));
            }
            if (!nl.words.empty())
                np.lines.push_back(std::move(nl));
        }
        if (!np.lines.empty())
            out.paragraphs.push_back(std::move(np));
    }
    return out;
}

AnnotationTree augment(const AnnotationTree& tree, const AugmentConfig& cfg, int size, std::mt19937_64& rng)
{
    return apply_augment(tree, draw_augment_params(cfg, size, rng), size);
}

} // namespace hisam
