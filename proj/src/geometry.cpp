// SPDX-License-Identifier: Apache-2.0
#include "hisam/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>
#include <boost/geometry/geometries/multi_polygon.hpp>
#include <opencv2/imgproc.hpp>

namespace bg = boost::geometry;

namespace hisam {

namespace {

using BPoint = bg::model::d2::point_xy<double>;
using BPolygon = bg::model::polygon<BPoint>;
using BMulti = bg::model::multi_polygon<BPolygon>;

BPolygon to_boost(const Polygon& poly)
{
    BPolygon out;
    for (const auto& p : poly)
        bg::append(out.outer(), BPoint(p.x, p.y));
    bg::correct(out);
    return out;
}

Polygon from_boost(const BPolygon& poly)
{
    Polygon out;
    const auto& ring = poly.outer();
    // boost rings are closed; drop the repeated last vertex
    for (size_t i = 0; i + 1 < ring.size(); ++i)
        out.emplace_back(ring[i].x(), ring[i].y());
    return out;
}

} // namespace

double polygon_area(const Polygon& poly)
{
    double a = 0.0;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return std::abs(a) * 0.5;
}

double polygon_perimeter(const Polygon& poly)
{
    double l = 0.0;
    const size_t n = poly.size();
    for (size_t i = 0; i < n && n > 1; ++i)
        l += cv::norm(poly[(i + 1) % n] - poly[i]);
    return l;
}

std::vector<Polygon> offset_polygon(const Polygon& poly, double distance)
{
    if (poly.size() < 3 || polygon_area(poly) <= 0.0)
        return {};
    if (distance == 0.0)
        return {poly};
    BPolygon input = to_boost(poly);
    if (!bg::is_valid(input)) {
        BPolygon hull;
        bg::convex_hull(input, hull);
        input = hull;
    }
    BMulti result;
    bg::strategy::buffer::distance_symmetric<double> dist(distance);
    bg::strategy::buffer::side_straight side;
    bg::strategy::buffer::join_miter join(4.0);
    bg::strategy::buffer::end_flat end;
    bg::strategy::buffer::point_square point;
    bg::buffer(input, result, dist, side, join, end, point);
    std::vector<Polygon> out;
    for (const auto& p : result) {
        auto converted = from_boost(p);
        if (converted.size() >= 3 && polygon_area(converted) > 1e-9)
            out.push_back(std::move(converted));
    }
    return out;
}

BinaryMask rasterize(std::span<const Polygon> polys, int width, int height)
{
    BinaryMask out(width, height);
    std::vector<double> xs;
    for (const auto& poly : polys) {
        const size_t n = poly.size();
        if (n < 3)
            continue;
        double y_min = poly[0].y, y_max = poly[0].y;
        for (const auto& p : poly) {
            y_min = std::min(y_min, p.y);
            y_max = std::max(y_max, p.y);
        }
        const int r0 = std::max(0, static_cast<int>(std::ceil(y_min - 0.5)));
        const int r1 = std::min(height - 1, static_cast<int>(std::ceil(y_max - 0.5)) - 1);
        for (int y = r0; y <= r1; ++y) {
            // crossings of the scanline through the pixel centers, half-open in y
            const double yc = y + 0.5;
            xs.clear();
            for (size_t i = 0; i < n; ++i) {
                const auto& a = poly[i];
                const auto& b = poly[(i + 1) % n];
                if ((a.y <= yc) != (b.y <= yc))
                    xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
            std::sort(xs.begin(), xs.end());
            for (size_t k = 0; k + 1 < xs.size(); k += 2) {
                // centers x + 0.5 in [xs[k], xs[k+1])
                const int c0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
                const int c1 = std::min(width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
                for (int x = c0; x < c1; ++x)
                    out.set(x, y, true);
            }
        }
    }
    return out;
}

BinaryMask rasterize(const Polygon& poly, int width, int height)
{
    return rasterize(std::span<const Polygon>(&poly, 1), width, height);
}

bool point_in_polygon(const Polygon& poly, cv::Point2d p)
{
    bool inside = false;
    const size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < x)
                inside = !inside;
        }
    }
    return inside;
}

double distance_to_boundary(const Polygon& poly, cv::Point2d p)
{
    double best = std::numeric_limits<double>::infinity();
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const auto a = poly[i];
        const auto b = poly[(i + 1) % n];
        const auto ab = b - a;
        const double len2 = ab.dot(ab);
        double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        best = std::min(best, cv::norm(p - (a + t * ab)));
    }
    return best;
}

std::vector<TracedComponent> trace_components(const BinaryMask& mask, double tolerance, int64_t min_area)
{
    std::vector<TracedComponent> out;
    if (mask.width() == 0 || mask.height() == 0)
        return out;
    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(mask.view(), labels, stats, centroids, 8, CV_32S);
    // order components by their first pixel in raster order
    std::vector<int> first(n, -1);
    for (int y = 0; y < labels.rows; ++y) {
        const int* row = labels.ptr<int>(y);
        for (int x = 0; x < labels.cols; ++x)
            if (row[x] > 0 && first[row[x]] < 0)
                first[row[x]] = y * labels.cols + x;
    }
    std::vector<int> order;
    for (int i = 1; i < n; ++i)
        order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return first[a] < first[b]; });

    for (int label : order) {
        const int64_t area = stats.at<int>(label, cv::CC_STAT_AREA);
        if (area < min_area)
            continue;
        cv::Mat comp = labels == label;
        TracedComponent tc;
        tc.mask = BinaryMask::from_mat(comp);
        tc.area = area;

        std::vector<std::vector<cv::Point>> contours;
        cv::findContours(comp, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
        std::vector<cv::Point> contour;
        for (auto& c : contours)
            if (c.size() > contour.size())
                contour = c;
        std::vector<cv::Point> simplified;
        if (tolerance > 0)
            cv::approxPolyDP(contour, simplified, tolerance, true);
        else
            simplified = contour;

        Polygon centers;
        for (const auto& p : simplified)
            centers.emplace_back(p.x + 0.5, p.y + 0.5);
        std::vector<Polygon> edge;
        if (centers.size() >= 3 && polygon_area(centers) >= 1.0)
            edge = offset_polygon(centers, 0.5);
        if (edge.empty()) {
            // thin component: fall back to its bounding box
            const int x = stats.at<int>(label, cv::CC_STAT_LEFT);
            const int y = stats.at<int>(label, cv::CC_STAT_TOP);
            const int w = stats.at<int>(label, cv::CC_STAT_WIDTH);
            const int h = stats.at<int>(label, cv::CC_STAT_HEIGHT);
            tc.polygon = box_polygon(x, y, x + w, y + h);
        } else {
            tc.polygon = std::move(*std::max_element(edge.begin(), edge.end(), [](const auto& a, const auto& b) {
                return polygon_area(a) < polygon_area(b);
            }));
        }
        out.push_back(std::move(tc));
    }
    return out;
}

Polygon transform_polygon(const Polygon& poly, const cv::Matx23d& m)
{
    Polygon out;
    out.reserve(poly.size());
    for (const auto& p : poly)
        out.emplace_back(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2), m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2));
    return out;
}

Polygon box_polygon(double x0, double y0, double x1, double y1)
{
    return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

} // namespace hisam
