// SPDX-License-Identifier: Apache-2.0
//
// Automatic mask generation output and its JSON dump. The dump is shared by
// the metrics, the CLI and the HTTP service.
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hisam/data.hpp"
#include "hisam/kernels.hpp"
#include "hisam/layout.hpp"
#include "hisam/mask.hpp"

namespace hisam {

/// Everything at input-image resolution. lines, line_scores, words,
/// paragraphs and para_scores are index-aligned.
struct AmgResult {
    std::string image_id;
    int width = 0;
    int height = 0;
    BinaryMask pixel_text;
    std::vector<BinaryMask> lines;
    std::vector<double> line_scores;
    std::vector<std::vector<WordInstance>> words;
    std::vector<BinaryMask> paragraphs;
    std::vector<double> para_scores;
    LayoutClusters layout;

    bool aligned() const;
    size_t word_count() const;
};

nlohmann::ordered_json prediction_to_json(const AmgResult& r);
/// Throws ValidationError on malformed dumps.
AmgResult prediction_from_json(const nlohmann::ordered_json& j);

/// Draft labels from a prediction: one paragraph per cluster, quadrilateral
/// lines (minimum-area rectangles) and the word polygons. Review status is
/// set to unreviewed.
AnnotationTree prediction_to_tree(const AmgResult& r);

/// Ground truth dressed as a prediction with unit scores.
AmgResult tree_to_prediction(const AnnotationTree& tree);

} // namespace hisam
