// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <queue>
#include <random>

#include <opencv2/imgproc.hpp>

#include "hisam/geometry.hpp"
#include "hisam/layout.hpp"
#include "hisam/nms.hpp"
#include "hisam/prediction.hpp"
#include "hisam/rle.hpp"

using namespace hisam;

namespace {

BinaryMask rect(int w, int h, int x0, int y0, int x1, int y1)
{
    return rasterize(box_polygon(x0, y0, x1, y1), w, h);
}

std::vector<int> bfs_labels(const std::vector<double>& iou, size_t k, double thr)
{
    std::vector<int> label(k, -1);
    int next = 0;
    for (size_t s = 0; s < k; ++s) {
        if (label[s] >= 0)
            continue;
        std::queue<size_t> q;
        q.push(s);
        label[s] = next;
        while (!q.empty()) {
            const size_t u = q.front();
            q.pop();
            for (size_t v = 0; v < k; ++v)
                if (v != u && label[v] < 0 && iou[u * k + v] > thr) {
                    label[v] = next;
                    q.push(v);
                }
        }
        ++next;
    }
    return label;
}

// Same partition up to relabelling.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b)
{
    if (a.size() != b.size())
        return false;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a.size(); ++j)
            if ((a[i] == a[j]) != (b[i] == b[j]))
                return false;
    return true;
}

std::vector<double> random_iou_graph(size_t k, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> iou(k * k, 0.0);
    for (size_t i = 0; i < k; ++i) {
        iou[i * k + i] = 1.0;
        for (size_t j = i + 1; j < k; ++j) {
            // sparse: most pairs far below the threshold
            const double v = u(rng) < 0.06 ? u(rng) * 0.5 + 0.4 : u(rng) * 0.2;
            iou[i * k + j] = iou[j * k + i] = v;
        }
    }
    return iou;
}

// Straight-line evaluation of linear-decay Matrix NMS over the sorted list.
std::vector<size_t> sequential_nms(const std::vector<BinaryMask>& masks, const std::vector<double>& scores,
                                   double thr)
{
    const size_t n = masks.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    auto iou = [&](size_t a, size_t b) { return mask_iou(masks[order[a]], masks[order[b]]); };
    std::vector<size_t> kept;
    for (size_t j = 0; j < n; ++j) {
        double decay = 1.0;
        for (size_t i = 0; i < j; ++i) {
            double comp = 0.0;
            for (size_t k = 0; k < i; ++k)
                comp = std::max(comp, iou(k, i));
            if (1.0 - comp <= 0.0)
                continue;
            decay = std::min(decay, (1.0 - iou(i, j)) / (1.0 - comp));
        }
        if (scores[order[j]] * decay >= thr)
            kept.push_back(order[j]);
    }
    return kept;
}

} // namespace

TEST_CASE("union-find")
{
    UnionFind uf(5);
    CHECK(uf.unite(0, 1));
    CHECK(uf.unite(3, 4));
    CHECK(!uf.unite(1, 0));
    CHECK(uf.find(0) == uf.find(1));
    CHECK(uf.find(2) != uf.find(1));
    CHECK(uf.unite(1, 4));
    CHECK(uf.find(0) == uf.find(3));
}

TEST_CASE("paragraph clustering")
{
    SUBCASE("chain is closed transitively")
    {
        const std::vector<double> iou{1, 0.6, 0.1, 0.6, 1, 0.6, 0.1, 0.6, 1};
        const auto c = cluster_paragraphs(iou, 3);
        CHECK(c.clusters.size() == 1);
        CHECK(c.assignment == std::vector<int>{0, 0, 0});
    }
    SUBCASE("all below threshold")
    {
        const std::vector<double> iou{1, 0.4, 0.2, 0.4, 1, 0.49, 0.2, 0.49, 1};
        const auto c = cluster_paragraphs(iou, 3);
        CHECK(c.clusters.size() == 3);
        CHECK(c.assignment == std::vector<int>{0, 1, 2});
    }
    SUBCASE("edges need strictly more than the threshold")
    {
        const std::vector<double> iou{1, 0.5, 0.5, 1};
        CHECK(cluster_paragraphs(iou, 2).clusters.size() == 2);
    }
    SUBCASE("cluster ids follow the smallest member")
    {
        const std::vector<double> iou{1, 0, 0.9, 0, 1, 0, 0.9, 0, 1};
        const auto c = cluster_paragraphs(iou, 3);
        CHECK(c.assignment == std::vector<int>{0, 1, 0});
        CHECK(c.clusters == std::vector<std::vector<int>>{{0, 2}, {1}});
    }
    SUBCASE("empty input")
    {
        const auto c = cluster_paragraphs({}, 0);
        CHECK(c.clusters.empty());
    }
    SUBCASE("IoU matrix from masks")
    {
        std::vector<BinaryMask> masks{rect(16, 16, 0, 0, 8, 8), rect(16, 16, 0, 0, 8, 8), rect(16, 16, 8, 8, 16, 16),
                                      BinaryMask(16, 16)};
        const auto iou = paragraph_iou_matrix(masks);
        CHECK(iou[0 * 4 + 1] == 1.0);
        CHECK(iou[0 * 4 + 2] == 0.0);
        CHECK(iou[3 * 4 + 3] == 0.0);
        CHECK(iou[2 * 4 + 2] == 1.0);
        for (size_t i = 0; i < 4; ++i)
            for (size_t j = 0; j < 4; ++j)
                CHECK(iou[i * 4 + j] == iou[j * 4 + i]);
    }
    SUBCASE("BFS oracle, permutation invariance and monotonicity")
    {
        std::mt19937_64 rng(42);
        for (int trial = 0; trial < 100; ++trial) {
            const size_t k = 50;
            const auto iou = random_iou_graph(k, rng);
            const auto c = cluster_paragraphs(iou, k, 0.5);
            CHECK(same_partition(c.assignment, bfs_labels(iou, k, 0.5)));

            std::vector<size_t> perm(k);
            for (size_t i = 0; i < k; ++i)
                perm[i] = i;
            std::shuffle(perm.begin(), perm.end(), rng);
            std::vector<double> piou(k * k);
            for (size_t i = 0; i < k; ++i)
                for (size_t j = 0; j < k; ++j)
                    piou[i * k + j] = iou[perm[i] * k + perm[j]];
            const auto pc = cluster_paragraphs(piou, k, 0.5);
            std::vector<int> unpermuted(k);
            for (size_t i = 0; i < k; ++i)
                unpermuted[perm[i]] = pc.assignment[i];
            CHECK(same_partition(unpermuted, c.assignment));

            const auto hi = cluster_paragraphs(iou, k, 0.7);
            for (size_t i = 0; i < k; ++i)
                for (size_t j = 0; j < k; ++j)
                    if (hi.assignment[i] == hi.assignment[j])
                        CHECK(c.assignment[i] == c.assignment[j]);
        }
    }
}

TEST_CASE("matrix NMS")
{
    const int w = 32, h = 32;
    SUBCASE("single candidate is kept")
    {
        std::vector<BinaryMask> m{rect(w, h, 2, 2, 10, 10)};
        std::vector<double> s{0.9};
        CHECK(matrix_nms(m, s) == std::vector<size_t>{0});
        CHECK(matrix_nms_scores(std::vector<double>{1.0}, s)[0] == 0.9);
    }
    SUBCASE("exact duplicate decays to zero")
    {
        std::vector<BinaryMask> m{rect(w, h, 2, 2, 10, 10), rect(w, h, 2, 2, 10, 10)};
        std::vector<double> s{0.8, 0.9};
        const auto iou = pairwise_iou(m);
        const auto decayed = matrix_nms_scores(iou, s);
        CHECK(decayed[1] == 0.9);
        CHECK(decayed[0] == 0.0);
        CHECK(matrix_nms(m, s) == std::vector<size_t>{1});
    }
    SUBCASE("suppressed suppressors are compensated")
    {
        // a > b > c; b duplicates a, c overlaps b only
        const std::vector<double> iou{1, 0.9, 0.0, 0.9, 1, 0.6, 0.0, 0.6, 1};
        const std::vector<double> s{0.95, 0.9, 0.85};
        const auto d = matrix_nms_scores(iou, s);
        CHECK(d[0] == doctest::Approx(0.95));
        CHECK(d[1] == doctest::Approx(0.9 * 0.1));
        CHECK(d[2] == doctest::Approx(0.85));
    }
    SUBCASE("sequential oracle on random instances")
    {
        std::mt19937_64 rng(8);
        std::uniform_int_distribution<int> pos(0, 24), size(4, 12), jitter(-2, 2);
        std::uniform_real_distribution<double> score(0.0, 1.0);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<BinaryMask> masks;
            std::vector<double> scores;
            for (int i = 0; i < 20; ++i) {
                if (i > 0 && score(rng) < 0.4) {
                    // near-duplicate of an earlier mask
                    const auto& base = masks[std::uniform_int_distribution<int>(0, i - 1)(rng)];
                    cv::Rect r = cv::boundingRect(base.view());
                    const int x0 = std::clamp(r.x + jitter(rng), 0, w - 2), y0 = std::clamp(r.y + jitter(rng), 0, h - 2);
                    masks.push_back(rect(w, h, x0, y0, std::min(w, x0 + r.width), std::min(h, y0 + r.height)));
                } else {
                    const int x0 = pos(rng), y0 = pos(rng);
                    masks.push_back(rect(w, h, x0, y0, std::min(w, x0 + size(rng)), std::min(h, y0 + size(rng))));
                }
                scores.push_back(score(rng));
            }
            CHECK(matrix_nms(masks, scores, 0.5) == sequential_nms(masks, scores, 0.5));
            CHECK(matrix_nms(masks, scores, 0.3) == sequential_nms(masks, scores, 0.3));
        }
    }
    SUBCASE("score order is stable")
    {
        CHECK(score_order(std::vector<double>{0.5, 0.9, 0.5, 0.1}) == std::vector<size_t>{1, 0, 2, 3});
    }
}

TEST_CASE("filter before NMS")
{
    const int w = 32, h = 32;
    // candidate 0: low predicted IoU, covering the other two
    std::vector<BinaryMask> masks{rect(w, h, 0, 0, 32, 16), rect(w, h, 0, 0, 16, 16), rect(w, h, 0, 0, 15, 16)};
    std::vector<double> scores{0.45, 0.9, 0.8};
    LineSelectStats st;
    const auto kept = filter_then_nms(masks, scores, 0.5, 0.5, &st);
    CHECK(st.candidates == 3);
    CHECK(st.after_filter == 2);
    CHECK(st.after_nms == kept.size());
    CHECK(kept == std::vector<size_t>{1});

    LineSelectStats none;
    CHECK(filter_then_nms(masks, std::vector<double>{0.1, 0.2, 0.3}, 0.5, 0.5, &none).empty());
    CHECK(none.after_filter == 0);
}

TEST_CASE("prediction dumps")
{
    AmgResult r;
    r.image_id = "img";
    r.width = 40;
    r.height = 30;
    r.pixel_text = rect(40, 30, 5, 5, 20, 10);
    r.lines = {rect(40, 30, 4, 4, 22, 11), rect(40, 30, 4, 14, 30, 21)};
    r.line_scores = {0.91, 0.75};
    WordInstance word;
    word.polygon = box_polygon(4, 4, 12, 11);
    word.mask = rasterize(word.polygon, 40, 30);
    word.score = 0.91;
    r.words = {{word}, {}};
    r.paragraphs = {rect(40, 30, 2, 2, 32, 24), rect(40, 30, 2, 2, 32, 25)};
    r.para_scores = {0.8, 0.7};
    r.layout = cluster_paragraphs(paragraph_iou_matrix(r.paragraphs), 2);
    CHECK(r.aligned());
    CHECK(r.word_count() == 1);

    const auto j = prediction_to_json(r);
    const auto back = prediction_from_json(j);
    CHECK(back.image_id == "img");
    CHECK(back.pixel_text == r.pixel_text);
    CHECK(back.lines == r.lines);
    CHECK(back.paragraphs == r.paragraphs);
    CHECK(back.line_scores == r.line_scores);
    CHECK(back.layout == r.layout);
    REQUIRE(back.words[0].size() == 1);
    CHECK(back.words[0][0].mask == word.mask);
    CHECK(back.words[0][0].polygon == word.polygon);
    CHECK(prediction_to_json(back).dump() == j.dump());

    auto broken = j;
    broken["lines"][0]["mask"]["counts"] = "1 2";
    CHECK_THROWS(prediction_from_json(broken));

    const auto tree = prediction_to_tree(r);
    CHECK(tree.review == ReviewStatus::Unreviewed);
    CHECK(tree.paragraphs.size() == 1);
    CHECK(tree.line_count() == 2);
    CHECK(tree.word_count() == 1);
    for (const auto& p : tree.paragraphs)
        for (const auto& l : p.lines)
            CHECK(l.vertices.size() == 4);
}
