// SPDX-License-Identifier: Apache-2.0
//
// Paragraph grouping of text-lines: pairwise paragraph-mask IoU, then
// connected components over edges with IoU above a threshold.
#pragma once

#include <span>
#include <vector>

#include "hisam/mask.hpp"

namespace hisam {

/// Disjoint-set forest with path compression and union by size.
class UnionFind {
public:
    explicit UnionFind(size_t n);
    size_t find(size_t x);
    /// Returns false when a and b were already joined.
    bool unite(size_t a, size_t b);
    size_t size() const { return parent_.size(); }

private:
    std::vector<size_t> parent_;
    std::vector<size_t> rank_;
};

struct LayoutClusters {
    std::vector<int> assignment;              // per-line cluster id
    std::vector<std::vector<int>> clusters;   // member indices, ascending

    bool operator==(const LayoutClusters&) const = default;
};

/// K x K row-major IoU of the paragraph masks (empty-vs-empty is 0).
std::vector<double> paragraph_iou_matrix(std::span<const BinaryMask> para_masks);

/// Components of the graph with edges iou(i, j) > thr. Cluster ids follow
/// the smallest member index.
LayoutClusters cluster_paragraphs(std::span<const double> iou, size_t k, double thr = 0.5);

} // namespace hisam
