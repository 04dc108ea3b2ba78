// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "hisam/data.hpp"
#include "hisam/errors.hpp"
#include "hisam/kernels.hpp"
#include "hisam/sampling.hpp"

using namespace hisam;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

const char* kOneWord = R"({
  "image_id": "one",
  "image_width": 64,
  "image_height": 32,
  "paragraphs": [
    {
      "vertices": [[4, 4], [60, 4], [60, 28], [4, 28]],
      "legible": true,
      "lines": [
        {
          "vertices": [[6, 6], [58, 6], [58, 26], [6, 26]],
          "text": "HI",
          "legible": true,
          "handwritten": false,
          "vertical": false,
          "words": [
            {
              "vertices": [[8, 8], [40.5, 8], [40.5, 24], [8, 24]],
              "text": "HI",
              "legible": true,
              "handwritten": false,
              "vertical": false
            }
          ]
        }
      ]
    }
  ]
})";

fs::path scratch_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("hisam_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SynthConfig small_config(uint64_t seed = 11)
{
    SynthConfig c;
    c.seed = seed;
    return c;
}

} // namespace

TEST_CASE("HierText JSON")
{
    const auto j = ojson::parse(kOneWord);

    SUBCASE("one-word fixture")
    {
        const auto tree = annotation_from_json(j, "$");
        CHECK(tree.image_id == "one");
        REQUIRE(tree.paragraphs.size() == 1);
        REQUIRE(tree.paragraphs[0].lines.size() == 1);
        REQUIRE(tree.paragraphs[0].lines[0].words.size() == 1);
        CHECK(tree.paragraphs[0].lines[0].words[0].vertices[1].x == 40.5);
        CHECK(!tree.pixel_text.has_value());
        CHECK(tree.word_count() == 1);
    }
    SUBCASE("re-serialization is identical")
    {
        const auto tree = annotation_from_json(j, "$");
        CHECK(annotation_to_json(tree, "").dump() == j.dump());
    }
    SUBCASE("empty paragraph list")
    {
        auto e = j;
        e["paragraphs"] = ojson::array();
        const auto tree = annotation_from_json(e, "$");
        CHECK(tree.line_count() == 0);
        CHECK(words_mask(tree, 64, 32).empty());
    }
    SUBCASE("schema errors name the path")
    {
        auto bad = j;
        bad["paragraphs"][0]["lines"][0]["words"][0].erase("vertices");
        try {
            annotation_from_json(bad, "$");
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("$.paragraphs[0].lines[0].words[0].vertices") != std::string::npos);
        }
        auto bad2 = j;
        bad2["paragraphs"][0]["lines"][0]["vertices"] = ojson::array({ojson::array({1, 2})});
        CHECK_THROWS_AS(annotation_from_json(bad2, "$"), DataError);
    }
    SUBCASE("file loader tolerates a missing pixel-text layer")
    {
        const auto dir = scratch_dir("loader");
        std::ofstream(dir / "ann.json") << R"({"annotations": [)" << kOneWord << "]}";
        const auto trees = load_hiertext(dir / "ann.json", dir / "images");
        REQUIRE(trees.size() == 1);
        CHECK(!trees[0].pixel_text.has_value());
        CHECK(trees[0].image.empty());
        std::ofstream(dir / "broken.json") << R"({"annotations": {}})";
        CHECK_THROWS_AS(load_hiertext(dir / "broken.json", dir), DataError);
    }
}

TEST_CASE("review status transitions are recorded")
{
    auto tree = annotation_from_json(ojson::parse(kOneWord), "$");
    tree.set_review(ReviewStatus::Unreviewed);
    tree.set_review(ReviewStatus::Edited);
    tree.set_review(ReviewStatus::Accepted);
    CHECK(tree.review_log == std::vector<std::string>{"none->unreviewed", "unreviewed->edited", "edited->accepted"});
    const auto j = annotation_to_json(tree, "");
    CHECK(j["review_status"] == "accepted");
    const auto back = annotation_from_json(j, "$");
    CHECK(back.review == ReviewStatus::Accepted);
    CHECK(back.review_log == tree.review_log);
}

TEST_CASE("synthetic generator")
{
    SUBCASE("minimal config satisfies every invariant")
    {
        SynthConfig c = small_config();
        c.paragraphs = {1, 1};
        c.lines_per_paragraph = {1, 1};
        c.words_per_line = {1, 1};
        const auto t = generate_synthetic_sample(c, 0);
        CHECK(t.paragraphs.size() == 1);
        CHECK(t.line_count() == 1);
        CHECK(t.word_count() == 1);
        CHECK(t.paragraphs[0].lines[0].vertices.size() == 4);
        CHECK(check_consistency(t).ok());
        REQUIRE(t.pixel_text.has_value());
        CHECK(!t.pixel_text->empty());
    }
    SUBCASE("100 samples pass the consistency sweep")
    {
        SynthConfig c = small_config(5);
        c.max_rotation_deg = 8;
        c.noise = true;
        const auto trees = generate_synthetic(c, 100);
        for (const auto& t : trees) {
            const auto r = check_consistency(t);
            CHECK(r.min_word_in_line >= 0.99);
            CHECK(r.min_line_in_paragraph >= 0.99);
            CHECK(r.pixel_text_outside_words == 0.0);
            CHECK(t.image.cols == c.canvas);
        }
    }
    SUBCASE("fixed seed reproduces byte-identical data")
    {
        const auto a = generate_synthetic(small_config(3), 4);
        const auto b = generate_synthetic(small_config(3), 4);
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(annotation_to_json(a[i], "").dump() == annotation_to_json(b[i], "").dump());
            CHECK(cv::norm(a[i].image, b[i].image, cv::NORM_INF) == 0);
            CHECK(*a[i].pixel_text == *b[i].pixel_text);
        }
        const auto c = generate_synthetic(small_config(4), 1);
        CHECK(annotation_to_json(a[0], "").dump() != annotation_to_json(c[0], "").dump());
    }
    SUBCASE("infeasible layouts and empty ranges")
    {
        SynthConfig c = small_config();
        c.canvas = 64;
        c.paragraphs = {6, 6};
        c.lines_per_paragraph = {4, 4};
        CHECK_THROWS_AS(generate_synthetic_sample(c, 0), DataError);
        SynthConfig e = small_config();
        e.words_per_line = {3, 2};
        CHECK_THROWS_AS(e.validate(), ConfigError);
    }
    SUBCASE("config JSON round trip")
    {
        SynthConfig c = small_config(9);
        c.glyph_height = {20, 24};
        nlohmann::json j = c;
        const auto back = j.get<SynthConfig>();
        CHECK(back.glyph_height.lo == 20);
        CHECK(back.seed == 9);
    }
}

TEST_CASE("export and load are inverse")
{
    const auto trees = generate_synthetic(small_config(21), 3);
    const auto dir = scratch_dir("export");
    export_labels(trees, dir, "train");
    CHECK(fs::exists(dir / "manifest.json"));
    const auto back = load_dataset_dir(dir);
    REQUIRE(back.size() == trees.size());
    for (size_t i = 0; i < trees.size(); ++i) {
        CHECK(annotation_to_json(back[i], "").dump() == annotation_to_json(trees[i], "").dump());
        REQUIRE(back[i].pixel_text.has_value());
        CHECK(*back[i].pixel_text == *trees[i].pixel_text);
        CHECK(cv::norm(back[i].image, trees[i].image, cv::NORM_INF) == 0);
        const cv::Mat png = cv::imread((dir / "masks" / (trees[i].image_id + ".png")).string(), cv::IMREAD_UNCHANGED);
        CHECK(png.type() == CV_8UC1);
        CHECK(cv::countNonZero(png != 0 & png != 255) == 0);
    }
}

TEST_CASE("training prompt sampling")
{
    SynthConfig c = small_config(13);
    c.paragraphs = {1, 1};
    c.lines_per_paragraph = {3, 3};
    const auto tree = generate_synthetic_sample(c, 0);
    REQUIRE(tree.line_count() == 3);

    SUBCASE("bounded by availability and on text")
    {
        std::mt19937_64 rng(1);
        const auto samples = sample_training_prompts(tree, 10, 2, rng);
        CHECK(samples.size() <= 6);
        CHECK(samples.size() >= 2);
        for (const auto& s : samples) {
            CHECK(!s.is_blank);
            const int x = int(s.point.x), y = int(s.point.y);
            CHECK(s.point.x - x == 0.5);
            CHECK(s.line_target.at(x, y) == 1);
            CHECK(tree.pixel_text->at(x, y) == 1);
            CHECK(intersection_area(s.line_target, s.para_target) == s.line_target.area());
        }
    }
    SUBCASE("word target is the union of the line's kernels")
    {
        std::mt19937_64 rng(2);
        const auto samples = sample_training_prompts(tree, 10, 1, rng);
        const auto refs = enumerate_lines(tree);
        for (const auto& s : samples) {
            bool found = false;
            for (const auto& ref : refs)
                if (line_mask(tree, ref, tree.width, tree.height) == s.line_target) {
                    BinaryMask expect(tree.width, tree.height);
                    for (const auto& w : tree.paragraphs[ref.paragraph].lines[ref.line].words)
                        expect |= rasterize(shrink_word_labels(w.vertices), tree.width, tree.height);
                    CHECK(s.word_target == expect);
                    found = true;
                }
            CHECK(found);
        }
    }
    SUBCASE("fewer lines than available")
    {
        std::mt19937_64 rng(3);
        CHECK(sample_training_prompts(tree, 2, 2, rng).size() <= 4);
    }
    SUBCASE("fixed seed replays")
    {
        std::mt19937_64 a(7), b(7);
        const auto sa = sample_training_prompts(tree, 10, 2, a);
        const auto sb = sample_training_prompts(tree, 10, 2, b);
        REQUIRE(sa.size() == sb.size());
        for (size_t i = 0; i < sa.size(); ++i) {
            CHECK(sa[i].point == sb[i].point);
            CHECK(sa[i].word_target == sb[i].word_target);
        }
    }
    SUBCASE("textless image yields one blank prompt")
    {
        AnnotationTree blank;
        blank.image_id = "blank";
        blank.width = blank.height = 32;
        blank.pixel_text = BinaryMask(32, 32);
        std::mt19937_64 rng(4);
        const auto samples = sample_training_prompts(blank, 10, 2, rng);
        REQUIRE(samples.size() == 1);
        CHECK(samples[0].is_blank);
        CHECK(samples[0].word_target.empty());
        CHECK(samples[0].line_target.empty());
        CHECK(samples[0].para_target.empty());
    }
}

TEST_CASE("augmentation")
{
    SUBCASE("identity draw leaves the sample unchanged")
    {
        const auto tree = generate_synthetic_sample(small_config(), 0);
        AugmentConfig cfg;
        std::mt19937_64 rng(0);
        const auto out = augment(tree, cfg, tree.width, rng);
        CHECK(annotation_to_json(out, "").dump() == annotation_to_json(tree, "").dump());
        CHECK(*out.pixel_text == *tree.pixel_text);
    }
    SUBCASE("90 degree rotation permutes box corners")
    {
        auto tree = annotation_from_json(ojson::parse(kOneWord), "$");
        tree.width = tree.height = 100;
        tree.paragraphs[0].lines[0].words[0].vertices = box_polygon(10, 20, 30, 40);
        AugmentParams p;
        p.angle_deg = 90;
        const auto out = apply_augment(tree, p, 100);
        const auto& v = out.paragraphs.at(0).lines.at(0).words.at(0).vertices;
        const Polygon expect{{20, 90}, {20, 70}, {40, 70}, {40, 90}};
        REQUIRE(v.size() == 4);
        for (size_t i = 0; i < 4; ++i) {
            CHECK(v[i].x == doctest::Approx(expect[i].x));
            CHECK(v[i].y == doctest::Approx(expect[i].y));
        }
    }
    SUBCASE("masks and polygons stay consistent over 100 draws")
    {
        SynthConfig c = small_config(17);
        const auto trees = generate_synthetic(c, 10);
        AugmentConfig cfg;
        cfg.enabled = true;
        std::mt19937_64 rng(99);
        for (int i = 0; i < 100; ++i) {
            auto tree = trees[i % trees.size()];
            tree.pixel_text = words_mask(tree, tree.width, tree.height);
            const auto out = augment(tree, cfg, c.canvas, rng);
            const auto polys = words_mask(out, c.canvas, c.canvas);
            if (polys.empty() && out.pixel_text->empty())
                continue;
            CHECK(mask_iou(polys, *out.pixel_text) >= 0.95);
        }
    }
    SUBCASE("config JSON")
    {
        AugmentConfig cfg;
        cfg.enabled = true;
        cfg.scale_max = 1.5;
        nlohmann::json j = cfg;
        const auto back = j.get<AugmentConfig>();
        CHECK(back.enabled);
        CHECK(back.scale_max == 1.5);
    }
}
