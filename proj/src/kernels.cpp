// SPDX-License-Identifier: Apache-2.0
#include "hisam/kernels.hpp"

#include <algorithm>
#include <limits>

#include <opencv2/imgproc.hpp>

namespace hisam {

namespace {

Polygon largest(std::vector<Polygon> pieces)
{
    if (pieces.empty())
        return {};
    return std::move(*std::max_element(pieces.begin(), pieces.end(), [](const Polygon& a, const Polygon& b) {
        return polygon_area(a) < polygon_area(b);
    }));
}

// Thinnest extent of a polygon, from its minimum-area bounding rectangle.
double min_width(const Polygon& p)
{
    std::vector<cv::Point2f> pts(p.begin(), p.end());
    const auto r = cv::minAreaRect(pts);
    return std::min(r.size.width, r.size.height);
}

} // namespace

double shrink_distance(const Polygon& poly, double ratio)
{
    const double l = polygon_perimeter(poly);
    return l > 0 ? polygon_area(poly) * (1.0 - ratio * ratio) / l : 0.0;
}

double unclip_distance(const Polygon& poly, double ratio)
{
    const double l = polygon_perimeter(poly);
    return l > 0 ? polygon_area(poly) * ratio / l : 0.0;
}

Polygon shrink_word_labels(const Polygon& word, double ratio)
{
    if (word.size() < 3 || polygon_area(word) <= 0)
        return {};
    auto kernel = largest(offset_polygon(word, -shrink_distance(word, ratio)));
    if (!kernel.empty() && min_width(kernel) < 1.0)
        return {};
    return kernel;
}

Polygon unclip_polygon(const Polygon& kernel, double ratio)
{
    if (kernel.size() < 3 || polygon_area(kernel) <= 0)
        return {};
    return largest(offset_polygon(kernel, unclip_distance(kernel, ratio)));
}

std::vector<WordInstance> expand_word_kernels(const BinaryMask& kernel_mask, double ratio, double tolerance)
{
    std::vector<WordInstance> out;
    for (auto& comp : trace_components(kernel_mask, tolerance, 4)) {
        WordInstance w;
        w.polygon = unclip_polygon(comp.polygon, ratio);
        if (w.polygon.empty())
            continue;
        w.mask = rasterize(w.polygon, kernel_mask.width(), kernel_mask.height());
        if (w.mask.empty())
            continue;
        out.push_back(std::move(w));
    }
    return out;
}

std::optional<size_t> select_clicked_word(cv::Point2d click, const std::vector<WordInstance>& instances)
{
    if (instances.empty())
        return std::nullopt;
    for (size_t i = 0; i < instances.size(); ++i)
        if (point_in_polygon(instances[i].polygon, click))
            return i;
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < instances.size(); ++i) {
        const double d = distance_to_boundary(instances[i].polygon, click);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

} // namespace hisam
