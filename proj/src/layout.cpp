// SPDX-License-Identifier: Apache-2.0
#include "hisam/layout.hpp"

#include <numeric>
#include <utility>

#include "hisam/errors.hpp"

namespace hisam {

UnionFind::UnionFind(size_t n) : parent_(n), rank_(n, 0)
{
    std::iota(parent_.begin(), parent_.end(), size_t{0});
}

size_t UnionFind::find(size_t x)
{
    size_t root = x;
    while (parent_[root] != root)
        root = parent_[root];
    while (parent_[x] != root)
        x = std::exchange(parent_[x], root);
    return root;
}

bool UnionFind::unite(size_t a, size_t b)
{
    a = find(a);
    b = find(b);
    if (a == b)
        return false;
    if (rank_[a] < rank_[b])
        std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b])
        ++rank_[a];
    return true;
}

std::vector<double> paragraph_iou_matrix(std::span<const BinaryMask> para_masks)
{
    return pairwise_iou(para_masks);
}

LayoutClusters cluster_paragraphs(std::span<const double> iou, size_t k, double thr)
{
    if (iou.size() != k * k)
        throw ValidationError("IoU matrix is not K x K");
    UnionFind uf(k);
    for (size_t i = 0; i < k; ++i)
        for (size_t j = i + 1; j < k; ++j)
            if (iou[i * k + j] > thr)
                uf.unite(i, j);

    LayoutClusters out;
    out.assignment.assign(k, -1);
    std::vector<int> root_id(k, -1);
    for (size_t i = 0; i < k; ++i) {
        const size_t r = uf.find(i);
        if (root_id[r] < 0) {
            root_id[r] = static_cast<int>(out.clusters.size());
            out.clusters.emplace_back();
        }
        out.assignment[i] = root_id[r];
        out.clusters[root_id[r]].push_back(static_cast<int>(i));
    }
    return out;
}

} // namespace hisam
