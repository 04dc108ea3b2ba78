// SPDX-License-Identifier: Apache-2.0
//
// Polygon utilities. Coordinates are in pixel-corner space: pixel (i, j)
// covers [i, i+1] x [j, j+1], so an axis-aligned box polygon rasterizes to
// exactly width x height pixels.
#pragma once

#include <span>
#include <vector>

#include <opencv2/core.hpp>

#include "hisam/mask.hpp"

namespace hisam {

using Polygon = std::vector<cv::Point2d>;

double polygon_area(const Polygon& poly);
double polygon_perimeter(const Polygon& poly);

/// Offset a simple polygon by `distance` (positive grows, negative shrinks)
/// with mitred joins. Shrinking may split the polygon or return nothing.
std::vector<Polygon> offset_polygon(const Polygon& poly, double distance);

/// Fill pixels whose centers fall inside any of the polygons.
BinaryMask rasterize(std::span<const Polygon> polys, int width, int height);
BinaryMask rasterize(const Polygon& poly, int width, int height);

bool point_in_polygon(const Polygon& poly, cv::Point2d p);
/// Euclidean distance from p to the polygon's boundary.
double distance_to_boundary(const Polygon& poly, cv::Point2d p);

struct TracedComponent {
    Polygon polygon;     // pixel-edge outline, simplified
    BinaryMask mask;     // the component's own pixels
    int64_t area = 0;    // pixel count
};

/// 8-connected components of `mask`, traced to outlines and simplified with
/// Douglas-Peucker at `tolerance` px. Components with fewer than `min_area`
/// pixels are dropped. Output is ordered by first pixel in raster order.
std::vector<TracedComponent> trace_components(const BinaryMask& mask, double tolerance = 2.0, int64_t min_area = 4);

/// Apply a 2x3 affine transform to every vertex.
Polygon transform_polygon(const Polygon& poly, const cv::Matx23d& affine);

/// Axis-aligned box as a 4-vertex polygon (clockwise in image coordinates).
Polygon box_polygon(double x0, double y0, double x1, double y1);

} // namespace hisam
