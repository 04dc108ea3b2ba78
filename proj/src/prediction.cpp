// SPDX-License-Identifier: Apache-2.0
#include "hisam/prediction.hpp"

#include <opencv2/imgproc.hpp>

#include "hisam/errors.hpp"
#include "hisam/rle.hpp"

using ojson = nlohmann::ordered_json;

namespace hisam {

bool AmgResult::aligned() const
{
    const size_t k = lines.size();
    return line_scores.size() == k && words.size() == k && paragraphs.size() == k && para_scores.size() == k &&
           layout.assignment.size() == k;
}

size_t AmgResult::word_count() const
{
    size_t n = 0;
    for (const auto& w : words)
        n += w.size();
    return n;
}

namespace {

ojson polygon_json(const Polygon& poly)
{
    ojson arr = ojson::array();
    for (const auto& p : poly)
        arr.push_back({p.x, p.y});
    return arr;
}

Polygon polygon_parse(const ojson& j)
{
    Polygon poly;
    for (const auto& v : j)
        poly.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
    return poly;
}

BinaryMask mask_parse(const ojson& j, int width, int height)
{
    auto m = rle_decode(rle_from_json(j));
    if (m.width() != width || m.height() != height)
        throw ValidationError("mask size disagrees with the image size");
    return m;
}

} // namespace

ojson prediction_to_json(const AmgResult& r)
{
    if (!r.aligned())
        throw ValidationError("prediction arrays are not index-aligned");
    ojson j;
    j["image_id"] = r.image_id;
    j["width"] = r.width;
    j["height"] = r.height;
    j["pixel_text"] = rle_to_json(rle_encode(r.pixel_text));
    ojson lines = ojson::array();
    for (size_t i = 0; i < r.lines.size(); ++i) {
        ojson l;
        l["score"] = r.line_scores[i];
        l["mask"] = rle_to_json(rle_encode(r.lines[i]));
        ojson words = ojson::array();
        for (const auto& w : r.words[i]) {
            ojson wj;
            wj["score"] = w.score;
            wj["polygon"] = polygon_json(w.polygon);
            wj["mask"] = rle_to_json(rle_encode(w.mask));
            words.push_back(std::move(wj));
        }
        l["words"] = std::move(words);
        l["paragraph"] = {{"score", r.para_scores[i]}, {"mask", rle_to_json(rle_encode(r.paragraphs[i]))}};
        l["cluster"] = r.layout.assignment[i];
        lines.push_back(std::move(l));
    }
    j["lines"] = std::move(lines);
    j["clusters"] = r.layout.clusters;
    return j;
}

AmgResult prediction_from_json(const ojson& j)
{
    AmgResult r;
    try {
        r.image_id = j.at("image_id").get<std::string>();
        r.width = j.at("width").get<int>();
        r.height = j.at("height").get<int>();
        r.pixel_text = mask_parse(j.at("pixel_text"), r.width, r.height);
        for (const auto& l : j.at("lines")) {
            r.line_scores.push_back(l.at("score").get<double>());
            r.lines.push_back(mask_parse(l.at("mask"), r.width, r.height));
            std::vector<WordInstance> words;
            for (const auto& wj : l.at("words")) {
                WordInstance w;
                w.score = wj.at("score").get<double>();
                w.polygon = polygon_parse(wj.at("polygon"));
                w.mask = mask_parse(wj.at("mask"), r.width, r.height);
                words.push_back(std::move(w));
            }
            r.words.push_back(std::move(words));
            r.para_scores.push_back(l.at("paragraph").at("score").get<double>());
            r.paragraphs.push_back(mask_parse(l.at("paragraph").at("mask"), r.width, r.height));
            r.layout.assignment.push_back(l.at("cluster").get<int>());
        }
        r.layout.clusters = j.at("clusters").get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed prediction dump: ") + e.what());
    }
    return r;
}

namespace {

Polygon min_area_quad(const BinaryMask& m)
{
    std::vector<cv::Point> pts;
    cv::findNonZero(m.view(), pts);
    if (pts.empty())
        return {};
    std::vector<cv::Point2f> centers;
    for (const auto& p : pts) {
        // the four corners of each pixel, so the rectangle covers whole pixels
        centers.emplace_back(p.x, p.y);
        centers.emplace_back(p.x + 1.f, p.y);
        centers.emplace_back(p.x, p.y + 1.f);
        centers.emplace_back(p.x + 1.f, p.y + 1.f);
    }
    const cv::RotatedRect rect = cv::minAreaRect(centers);
    cv::Point2f corners[4];
    rect.points(corners);
    Polygon quad;
    for (const auto& c : corners)
        quad.emplace_back(c.x, c.y);
    return quad;
}

Polygon outline(const BinaryMask& m)
{
    auto comps = trace_components(m, 2.0, 1);
    if (comps.empty())
        return {};
    auto best = std::max_element(comps.begin(), comps.end(),
                                 [](const auto& a, const auto& b) { return a.area < b.area; });
    return best->polygon;
}

} // namespace

AnnotationTree prediction_to_tree(const AmgResult& r)
{
    AnnotationTree tree;
    tree.image_id = r.image_id;
    tree.width = r.width;
    tree.height = r.height;
    tree.pixel_text = r.pixel_text;
    tree.review = ReviewStatus::Unreviewed;
    for (const auto& members : r.layout.clusters) {
        Paragraph para;
        BinaryMask pm(r.width, r.height);
        for (int idx : members) {
            pm |= r.paragraphs[idx];
            Line line;
            line.vertices = min_area_quad(r.lines[idx]);
            if (line.vertices.empty())
                continue;
            for (const auto& w : r.words[idx]) {
                Word word;
                word.vertices = w.polygon;
                line.words.push_back(std::move(word));
            }
            para.lines.push_back(std::move(line));
        }
        if (para.lines.empty())
            continue;
        para.vertices = outline(pm);
        if (para.vertices.size() < 3) {
            BinaryMask lm(r.width, r.height);
            for (int idx : members)
                lm |= r.lines[idx];
            para.vertices = min_area_quad(lm);
        }
        tree.paragraphs.push_back(std::move(para));
    }
    return tree;
}

AmgResult tree_to_prediction(const AnnotationTree& tree)
{
    AmgResult r;
    r.image_id = tree.image_id;
    r.width = tree.width;
    r.height = tree.height;
    r.pixel_text = tree.pixel_text ? *tree.pixel_text : words_mask(tree, tree.width, tree.height);
    for (size_t p = 0; p < tree.paragraphs.size(); ++p) {
        const auto pm = paragraph_mask(tree, p, tree.width, tree.height);
        std::vector<int> members;
        for (size_t l = 0; l < tree.paragraphs[p].lines.size(); ++l) {
            members.push_back(static_cast<int>(r.lines.size()));
            r.layout.assignment.push_back(static_cast<int>(r.layout.clusters.size()));
            r.lines.push_back(line_mask(tree, {p, l}, tree.width, tree.height));
            r.line_scores.push_back(1.0);
            std::vector<WordInstance> words;
            for (const auto& w : tree.paragraphs[p].lines[l].words)
                words.push_back({w.vertices, rasterize(w.vertices, tree.width, tree.height), 1.0});
            r.words.push_back(std::move(words));
            r.paragraphs.push_back(pm);
            r.para_scores.push_back(1.0);
        }
        if (!members.empty())
            r.layout.clusters.push_back(std::move(members));
    }
    return r;
}

} // namespace hisam
