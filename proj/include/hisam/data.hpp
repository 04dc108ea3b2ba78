// SPDX-License-Identifier: Apache-2.0
//
// HierText-schema annotations (paragraphs -> lines -> words) with an extra
// pixel-level text layer, plus a synthetic generator that emits all four
// hierarchies with exact, mutually consistent labels.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "hisam/geometry.hpp"
#include "hisam/mask.hpp"

namespace hisam {

struct Word {
    Polygon vertices;
    std::string text;
    bool legible = true;
    bool handwritten = false;
    bool vertical = false;
};

struct Line {
    Polygon vertices;   // quadrilateral
    std::string text;
    bool legible = true;
    bool handwritten = false;
    bool vertical = false;
    std::vector<Word> words;
};

struct Paragraph {
    Polygon vertices;
    bool legible = true;
    std::vector<Line> lines;
};

/// Review state of machine-drafted labels.
enum class ReviewStatus { None, Unreviewed, Accepted, Rejected, Edited };

std::string to_string(ReviewStatus s);
ReviewStatus review_status_from_string(const std::string& s);

struct AnnotationTree {
    std::string image_id;
    int width = 0;
    int height = 0;
    cv::Mat image;                         // 8-bit RGB, may be empty
    std::optional<BinaryMask> pixel_text;  // absent when the layer is missing
    std::vector<Paragraph> paragraphs;
    ReviewStatus review = ReviewStatus::None;
    std::vector<std::string> review_log;   // "from->to" transitions

    size_t line_count() const;
    size_t word_count() const;

    /// Record a review transition.
    void set_review(ReviewStatus next);
};

/// Flat index of a line inside the tree.
struct LineRef {
    size_t paragraph = 0;
    size_t line = 0;
};
std::vector<LineRef> enumerate_lines(const AnnotationTree& tree);

BinaryMask line_mask(const AnnotationTree& tree, LineRef ref, int width, int height);
BinaryMask paragraph_mask(const AnnotationTree& tree, size_t paragraph, int width, int height);
/// Union of word masks; illegible words only when include_illegible.
BinaryMask words_mask(const AnnotationTree& tree, int width, int height, bool include_illegible = true);

/// Polygons are stored in image pixels; rasterize at another resolution by
/// scaling the vertices.
Polygon scale_polygon(const Polygon& poly, double sx, double sy);

// ---------------------------------------------------------------------------
// HierText JSON
// ---------------------------------------------------------------------------

/// Parse one annotation entry; throws DataError naming the JSON path.
AnnotationTree annotation_from_json(const nlohmann::ordered_json& j, const std::string& path);
nlohmann::ordered_json annotation_to_json(const AnnotationTree& tree, const std::string& mask_path);

/// Load every annotation from a HierText-style file. Images are read from
/// `images_dir/<image_id>.png` (or .jpg) when present; pixel-text masks from
/// the per-annotation "pixel_text" path relative to the JSON file.
std::vector<AnnotationTree> load_hiertext(const std::filesystem::path& json_path,
                                          const std::filesystem::path& images_dir);

/// Writes annotations.json, images/<id>.png, masks/<id>.png and manifest.json.
void export_labels(const std::vector<AnnotationTree>& trees, const std::filesystem::path& dir,
                   const std::string& split = "train");

/// Loads a directory written by export_labels.
std::vector<AnnotationTree> load_dataset_dir(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct IntRange {
    int lo = 1;
    int hi = 1;
};

struct SynthConfig {
    int canvas = 256;
    IntRange paragraphs{1, 2};
    IntRange lines_per_paragraph{1, 3};
    IntRange words_per_line{1, 3};
    IntRange glyphs_per_word{1, 3};
    IntRange glyph_height{16, 20};
    double stroke_ratio = 0.22;       // stroke width / glyph height
    double max_rotation_deg = 0.0;
    bool noise = false;
    double illegible_prob = 0.0;
    int padding = 2;                   // word box margin around strokes
    uint64_t seed = 1;

    /// Throws ConfigError for empty ranges.
    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// The glyph alphabet rendered by the generator.
const std::string& synth_alphabet();

/// Deterministic for a given (cfg.seed, index).
AnnotationTree generate_synthetic_sample(const SynthConfig& cfg, int index);
std::vector<AnnotationTree> generate_synthetic(const SynthConfig& cfg, int count);

/// Consistency report for one tree: word-in-line, line-in-paragraph
/// containment fractions and pixel-text coverage by dilated words.
struct ConsistencyReport {
    double min_word_in_line = 1.0;
    double min_line_in_paragraph = 1.0;
    double pixel_text_outside_words = 0.0;   // fraction of text pixels outside dilated words
    bool ok(double tol = 0.99) const
    {
        return min_word_in_line >= tol && min_line_in_paragraph >= tol && pixel_text_outside_words == 0.0;
    }
};
ConsistencyReport check_consistency(const AnnotationTree& tree, int dilation = 2);

} // namespace hisam
