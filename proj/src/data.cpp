// SPDX-License-Identifier: Apache-2.0
#include "hisam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hisam/errors.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace hisam {

// ---------------------------------------------------------------------------
// Tree helpers
// ---------------------------------------------------------------------------

std::string to_string(ReviewStatus s)
{
    switch (s) {
    case ReviewStatus::None: return "none";
    case ReviewStatus::Unreviewed: return "unreviewed";
    case ReviewStatus::Accepted: return "accepted";
    case ReviewStatus::Rejected: return "rejected";
    case ReviewStatus::Edited: return "edited";
    }
    return "none";
}

ReviewStatus review_status_from_string(const std::string& s)
{
    if (s == "none") return ReviewStatus::None;
    if (s == "unreviewed") return ReviewStatus::Unreviewed;
    if (s == "accepted") return ReviewStatus::Accepted;
    if (s == "rejected") return ReviewStatus::Rejected;
    if (s == "edited") return ReviewStatus::Edited;
    throw DataError("unknown review status '" + s + "'");
}

size_t AnnotationTree::line_count() const
{
    size_t n = 0;
    for (const auto& p : paragraphs)
        n += p.lines.size();
    return n;
}

size_t AnnotationTree::word_count() const
{
    size_t n = 0;
    for (const auto& p : paragraphs)
        for (const auto& l : p.lines)
            n += l.words.size();
    return n;
}

void AnnotationTree::set_review(ReviewStatus next)
{
    if (next == review)
        return;
    review_log.push_back(to_string(review) + "->" + to_string(next));
    review = next;
}

std::vector<LineRef> enumerate_lines(const AnnotationTree& tree)
{
    std::vector<LineRef> refs;
    for (size_t p = 0; p < tree.paragraphs.size(); ++p)
        for (size_t l = 0; l < tree.paragraphs[p].lines.size(); ++l)
            refs.push_back({p, l});
    return refs;
}

Polygon scale_polygon(const Polygon& poly, double sx, double sy)
{
    Polygon out;
    out.reserve(poly.size());
    for (const auto& p : poly)
        out.emplace_back(p.x * sx, p.y * sy);
    return out;
}

namespace {

BinaryMask raster_scaled(const Polygon& poly, const AnnotationTree& tree, int width, int height)
{
    return rasterize(scale_polygon(poly, double(width) / tree.width, double(height) / tree.height), width, height);
}

} // namespace

BinaryMask line_mask(const AnnotationTree& tree, LineRef ref, int width, int height)
{
    return raster_scaled(tree.paragraphs.at(ref.paragraph).lines.at(ref.line).vertices, tree, width, height);
}

BinaryMask paragraph_mask(const AnnotationTree& tree, size_t paragraph, int width, int height)
{
    return raster_scaled(tree.paragraphs.at(paragraph).vertices, tree, width, height);
}

BinaryMask words_mask(const AnnotationTree& tree, int width, int height, bool include_illegible)
{
    std::vector<Polygon> polys;
    const double sx = double(width) / tree.width, sy = double(height) / tree.height;
    for (const auto& p : tree.paragraphs)
        for (const auto& l : p.lines)
            for (const auto& w : l.words)
                if (include_illegible || w.legible)
                    polys.push_back(scale_polygon(w.vertices, sx, sy));
    return rasterize(polys, width, height);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

ojson polygon_to_json(const Polygon& poly)
{
    ojson arr = ojson::array();
    for (const auto& p : poly) {
        auto coord = [](double v) -> ojson {
            if (v == std::floor(v) && std::abs(v) < 1e15)
                return static_cast<int64_t>(v);
            return v;
        };
        arr.push_back(ojson::array({coord(p.x), coord(p.y)}));
    }
    return arr;
}

Polygon polygon_from_json(const ojson& j, const std::string& path)
{
    if (!j.is_array())
        throw DataError(path + ": expected an array of [x, y] pairs");
    Polygon poly;
    for (size_t i = 0; i < j.size(); ++i) {
        const auto& v = j[i];
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
            throw DataError(path + "[" + std::to_string(i) + "]: expected [x, y]");
        poly.emplace_back(v[0].get<double>(), v[1].get<double>());
    }
    if (poly.size() < 3)
        throw DataError(path + ": polygon needs at least 3 vertices");
    return poly;
}

template <typename T>
T field(const ojson& j, const char* key, const std::string& path, T fallback)
{
    if (!j.contains(key))
        return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw DataError(path + "." + key + ": wrong type");
    }
}

const ojson& required(const ojson& j, const char* key, const std::string& path)
{
    if (!j.is_object())
        throw DataError(path + ": expected an object");
    if (!j.contains(key))
        throw DataError(path + "." + key + ": missing");
    return j.at(key);
}

} // namespace

AnnotationTree annotation_from_json(const ojson& j, const std::string& path)
{
    AnnotationTree tree;
    tree.image_id = required(j, "image_id", path).is_string() ? j.at("image_id").get<std::string>() : "";
    if (tree.image_id.empty())
        throw DataError(path + ".image_id: expected a non-empty string");
    tree.width = field<int>(j, "image_width", path, 0);
    tree.height = field<int>(j, "image_height", path, 0);
    if (tree.width <= 0 || tree.height <= 0)
        throw DataError(path + ": image_width/image_height must be positive");
    if (j.contains("review_status"))
        tree.review = review_status_from_string(field<std::string>(j, "review_status", path, "none"));
    if (j.contains("review_log"))
        tree.review_log = field<std::vector<std::string>>(j, "review_log", path, {});

    const auto& paras = required(j, "paragraphs", path);
    if (!paras.is_array())
        throw DataError(path + ".paragraphs: expected an array");
    for (size_t pi = 0; pi < paras.size(); ++pi) {
        const std::string ppath = path + ".paragraphs[" + std::to_string(pi) + "]";
        const auto& pj = paras[pi];
        Paragraph para;
        para.vertices = polygon_from_json(required(pj, "vertices", ppath), ppath + ".vertices");
        para.legible = field<bool>(pj, "legible", ppath, true);
        const auto& lines = required(pj, "lines", ppath);
        if (!lines.is_array())
            throw DataError(ppath + ".lines: expected an array");
        for (size_t li = 0; li < lines.size(); ++li) {
            const std::string lpath = ppath + ".lines[" + std::to_string(li) + "]";
            const auto& lj = lines[li];
            Line line;
            line.vertices = polygon_from_json(required(lj, "vertices", lpath), lpath + ".vertices");
            line.text = field<std::string>(lj, "text", lpath, "");
            line.legible = field<bool>(lj, "legible", lpath, true);
            line.handwritten = field<bool>(lj, "handwritten", lpath, false);
            line.vertical = field<bool>(lj, "vertical", lpath, false);
            const auto& words = required(lj, "words", lpath);
            if (!words.is_array())
                throw DataError(lpath + ".words: expected an array");
            for (size_t wi = 0; wi < words.size(); ++wi) {
                const std::string wpath = lpath + ".words[" + std::to_string(wi) + "]";
                const auto& wj = words[wi];
                Word word;
                word.vertices = polygon_from_json(required(wj, "vertices", wpath), wpath + ".vertices");
                word.text = field<std::string>(wj, "text", wpath, "");
                word.legible = field<bool>(wj, "legible", wpath, true);
                word.handwritten = field<bool>(wj, "handwritten", wpath, false);
                word.vertical = field<bool>(wj, "vertical", wpath, false);
                line.words.push_back(std::move(word));
            }
            para.lines.push_back(std::move(line));
        }
        tree.paragraphs.push_back(std::move(para));
    }
    return tree;
}

ojson annotation_to_json(const AnnotationTree& tree, const std::string& mask_path)
{
    ojson j;
    j["image_id"] = tree.image_id;
    j["image_width"] = tree.width;
    j["image_height"] = tree.height;
    ojson paras = ojson::array();
    for (const auto& p : tree.paragraphs) {
        ojson pj;
        pj["vertices"] = polygon_to_json(p.vertices);
        pj["legible"] = p.legible;
        ojson lines = ojson::array();
        for (const auto& l : p.lines) {
            ojson lj;
            lj["vertices"] = polygon_to_json(l.vertices);
            lj["text"] = l.text;
            lj["legible"] = l.legible;
            lj["handwritten"] = l.handwritten;
            lj["vertical"] = l.vertical;
            ojson words = ojson::array();
            for (const auto& w : l.words) {
                ojson wj;
                wj["vertices"] = polygon_to_json(w.vertices);
                wj["text"] = w.text;
                wj["legible"] = w.legible;
                wj["handwritten"] = w.handwritten;
                wj["vertical"] = w.vertical;
                words.push_back(std::move(wj));
            }
            lj["words"] = std::move(words);
            lines.push_back(std::move(lj));
        }
        pj["lines"] = std::move(lines);
        paras.push_back(std::move(pj));
    }
    j["paragraphs"] = std::move(paras);
    if (!mask_path.empty())
        j["pixel_text"] = mask_path;
    if (tree.review != ReviewStatus::None || !tree.review_log.empty()) {
        j["review_status"] = to_string(tree.review);
        j["review_log"] = tree.review_log;
    }
    return j;
}

namespace {

cv::Mat read_rgb(const fs::path& path)
{
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty())
        return {};
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

std::vector<AnnotationTree> load_hiertext(const fs::path& json_path, const fs::path& images_dir)
{
    ojson root;
    try {
        root = ojson::parse(read_file(json_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(json_path.string() + ": " + e.what());
    }
    const auto& anns = required(root, "annotations", "$");
    if (!anns.is_array())
        throw DataError("$.annotations: expected an array");
    std::vector<AnnotationTree> trees;
    for (size_t i = 0; i < anns.size(); ++i) {
        const std::string path = "$.annotations[" + std::to_string(i) + "]";
        auto tree = annotation_from_json(anns[i], path);
        for (const char* ext : {".png", ".jpg"}) {
            const auto p = images_dir / (tree.image_id + ext);
            if (fs::exists(p)) {
                tree.image = read_rgb(p);
                if (tree.image.empty())
                    throw DataError(p.string() + ": unreadable image");
                if (tree.image.cols != tree.width || tree.image.rows != tree.height)
                    throw DataError(path + ": image size disagrees with image_width/image_height");
                break;
            }
        }
        if (anns[i].contains("pixel_text")) {
            const auto mask_path = json_path.parent_path() / anns[i]["pixel_text"].get<std::string>();
            cv::Mat m = cv::imread(mask_path.string(), cv::IMREAD_GRAYSCALE);
            if (m.empty())
                throw DataError(path + ".pixel_text: cannot read " + mask_path.string());
            if (m.cols != tree.width || m.rows != tree.height)
                throw DataError(path + ".pixel_text: mask size disagrees with the image");
            tree.pixel_text = BinaryMask::from_mat(m);
        }
        trees.push_back(std::move(tree));
    }
    return trees;
}

void export_labels(const std::vector<AnnotationTree>& trees, const fs::path& dir, const std::string& split)
{
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    ojson anns = ojson::array();
    ojson ids = ojson::array();
    for (const auto& t : trees) {
        std::string mask_rel;
        if (t.pixel_text) {
            mask_rel = "masks/" + t.image_id + ".png";
            if (!cv::imwrite((dir / mask_rel).string(), t.pixel_text->to_image()))
                throw DataError("cannot write " + (dir / mask_rel).string());
        }
        if (!t.image.empty()) {
            cv::Mat bgr;
            cv::cvtColor(t.image, bgr, cv::COLOR_RGB2BGR);
            const auto img_path = dir / "images" / (t.image_id + ".png");
            if (!cv::imwrite(img_path.string(), bgr))
                throw DataError("cannot write " + img_path.string());
        }
        anns.push_back(annotation_to_json(t, mask_rel));
        ids.push_back(t.image_id);
    }
    ojson root;
    root["info"] = {{"format", "hiertext"}, {"version", "1"}};
    root["annotations"] = std::move(anns);
    std::ofstream(dir / "annotations.json") << root.dump(2) << "\n";

    ojson manifest;
    manifest["annotations"] = "annotations.json";
    manifest["images"] = "images";
    manifest["splits"] = {{split, std::move(ids)}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

std::vector<AnnotationTree> load_dataset_dir(const fs::path& dir)
{
    fs::path json = dir / "annotations.json";
    fs::path images = dir / "images";
    if (fs::exists(dir / "manifest.json")) {
        auto manifest = ojson::parse(read_file(dir / "manifest.json"));
        json = dir / manifest.value("annotations", std::string("annotations.json"));
        images = dir / manifest.value("images", std::string("images"));
    }
    if (!fs::exists(json))
        throw DataError("no annotations.json in " + dir.string());
    return load_hiertext(json, images);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SynthConfig::validate() const
{
    auto check = [](const IntRange& r, const char* name) {
        if (r.lo < 1 || r.hi < r.lo)
            throw ConfigError(std::string("synth range '") + name + "' is empty");
    };
    check(paragraphs, "paragraphs");
    check(lines_per_paragraph, "lines_per_paragraph");
    check(words_per_line, "words_per_line");
    check(glyphs_per_word, "glyphs_per_word");
    check(glyph_height, "glyph_height");
    if (canvas < 16)
        throw ConfigError("synth canvas too small");
    if (stroke_ratio <= 0 || stroke_ratio >= 0.5)
        throw ConfigError("synth stroke_ratio must be in (0, 0.5)");
}

namespace {

void range_to_json(nlohmann::json& j, const char* key, const IntRange& r)
{
    j[key] = {r.lo, r.hi};
}

IntRange range_from_json(const nlohmann::json& j, const char* key, IntRange fallback)
{
    if (!j.contains(key))
        return fallback;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2)
        throw ConfigError(std::string("synth.") + key + " must be [lo, hi]");
    return {v[0].get<int>(), v[1].get<int>()};
}

} // namespace

void to_json(nlohmann::json& j, const SynthConfig& c)
{
    j = nlohmann::json::object();
    j["canvas"] = c.canvas;
    range_to_json(j, "paragraphs", c.paragraphs);
    range_to_json(j, "lines_per_paragraph", c.lines_per_paragraph);
    range_to_json(j, "words_per_line", c.words_per_line);
    range_to_json(j, "glyphs_per_word", c.glyphs_per_word);
    range_to_json(j, "glyph_height", c.glyph_height);
    j["stroke_ratio"] = c.stroke_ratio;
    j["max_rotation_deg"] = c.max_rotation_deg;
    j["noise"] = c.noise;
    j["illegible_prob"] = c.illegible_prob;
    j["padding"] = c.padding;
    j["seed"] = c.seed;
}

void from_json(const nlohmann::json& j, SynthConfig& c)
{
    SynthConfig d;
    c.canvas = j.value("canvas", d.canvas);
    c.paragraphs = range_from_json(j, "paragraphs", d.paragraphs);
    c.lines_per_paragraph = range_from_json(j, "lines_per_paragraph", d.lines_per_paragraph);
    c.words_per_line = range_from_json(j, "words_per_line", d.words_per_line);
    c.glyphs_per_word = range_from_json(j, "glyphs_per_word", d.glyphs_per_word);
    c.glyph_height = range_from_json(j, "glyph_height", d.glyph_height);
    c.stroke_ratio = j.value("stroke_ratio", d.stroke_ratio);
    c.max_rotation_deg = j.value("max_rotation_deg", d.max_rotation_deg);
    c.noise = j.value("noise", d.noise);
    c.illegible_prob = j.value("illegible_prob", d.illegible_prob);
    c.padding = j.value("padding", d.padding);
    c.seed = j.value("seed", d.seed);
}

namespace {

using Stroke = std::vector<cv::Point2d>;   // polyline in the unit glyph box

struct Glyph {
    char name;
    std::vector<Stroke> strokes;
};

const std::vector<Glyph>& glyph_table()
{
    static const std::vector<Glyph> table = {
        {'A', {{{0, 1}, {0, 0}, {1, 0}, {1, 1}}, {{0, 0.5}, {1, 0.5}}}},
        {'C', {{{1, 0}, {0, 0}, {0, 1}, {1, 1}}}},
        {'E', {{{1, 0}, {0, 0}, {0, 1}, {1, 1}}, {{0, 0.5}, {0.8, 0.5}}}},
        {'F', {{{1, 0}, {0, 0}, {0, 1}}, {{0, 0.5}, {0.8, 0.5}}}},
        {'H', {{{0, 0}, {0, 1}}, {{1, 0}, {1, 1}}, {{0, 0.5}, {1, 0.5}}}},
        {'I', {{{0.5, 0}, {0.5, 1}}, {{0.1, 0}, {0.9, 0}}, {{0.1, 1}, {0.9, 1}}}},
        {'J', {{{1, 0}, {1, 1}, {0, 1}, {0, 0.6}}}},
        {'K', {{{0, 0}, {0, 1}}, {{1, 0}, {0, 0.5}, {1, 1}}}},
        {'L', {{{0, 0}, {0, 1}, {1, 1}}}},
        {'M', {{{0, 1}, {0, 0}, {0.5, 0.5}, {1, 0}, {1, 1}}}},
        {'N', {{{0, 1}, {0, 0}, {1, 1}, {1, 0}}}},
        {'O', {{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}}},
        {'P', {{{0, 1}, {0, 0}, {1, 0}, {1, 0.5}, {0, 0.5}}}},
        {'T', {{{0, 0}, {1, 0}}, {{0.5, 0}, {0.5, 1}}}},
        {'U', {{{0, 0}, {0, 1}, {1, 1}, {1, 0}}}},
        {'V', {{{0, 0}, {0.5, 1}, {1, 0}}}},
        {'X', {{{0, 0}, {1, 1}}, {{1, 0}, {0, 1}}}},
        {'Y', {{{0, 0}, {0.5, 0.5}, {1, 0}}, {{0.5, 0.5}, {0.5, 1}}}},
        {'Z', {{{0, 0}, {1, 0}, {0, 1}, {1, 1}}}},
    };
    return table;
}

struct GlyphPlacement {
    const Glyph* glyph;
    double x, y, w, h;   // box in the paragraph's unrotated frame
};

struct WordDraft {
    std::vector<GlyphPlacement> glyphs;
    double x0, y0, x1, y1;
    std::string text;
    bool legible = true;
};

struct LineDraft {
    std::vector<WordDraft> words;
    double x0, y0, x1, y1;
};

struct ParagraphDraft {
    std::vector<LineDraft> lines;
    double width = 0, height = 0;
    int glyph_h = 0;
};

int uniform(std::mt19937_64& rng, IntRange r)
{
    return std::uniform_int_distribution<int>(r.lo, r.hi)(rng);
}

/// Lays out a paragraph with its top-left corner at (0, 0).
ParagraphDraft draft_paragraph(const SynthConfig& cfg, std::mt19937_64& rng)
{
    ParagraphDraft para;
    const int h = uniform(rng, cfg.glyph_height);
    para.glyph_h = h;
    const double glyph_w = std::round(0.6 * h);
    const double glyph_gap = std::round(0.25 * h);
    const double word_gap = std::round(0.7 * h);
    const double line_gap = std::round(0.5 * h);
    const double pad_w = cfg.padding;
    const double pad_l = cfg.padding;
    const auto& table = glyph_table();

    const int n_lines = uniform(rng, cfg.lines_per_paragraph);
    double y = 2 * pad_l;
    for (int li = 0; li < n_lines; ++li) {
        LineDraft line;
        const int n_words = uniform(rng, cfg.words_per_line);
        double x = 2 * pad_l;
        for (int wi = 0; wi < n_words; ++wi) {
            WordDraft word;
            const int n_glyphs = uniform(rng, cfg.glyphs_per_word);
            double gx = x + pad_w;
            for (int gi = 0; gi < n_glyphs; ++gi) {
                const auto& g = table[std::uniform_int_distribution<size_t>(0, table.size() - 1)(rng)];
                word.glyphs.push_back({&g, gx, y + pad_w, glyph_w, double(h)});
                word.text.push_back(g.name);
                gx += glyph_w + glyph_gap;
            }
            gx -= glyph_gap;
            word.x0 = x;
            word.y0 = y;
            word.x1 = gx + pad_w;
            word.y1 = y + h + 2 * pad_w;
            word.legible = std::uniform_real_distribution<double>(0, 1)(rng) >= cfg.illegible_prob;
            x = word.x1 + word_gap;
            line.words.push_back(std::move(word));
        }
        line.x0 = line.words.front().x0 - pad_l;
        line.y0 = y - pad_l;
        line.x1 = line.words.back().x1 + pad_l;
        line.y1 = y + h + 2 * pad_w + pad_l;
        para.width = std::max(para.width, line.x1 + pad_l);
        y = line.y1 + line_gap + pad_l;
        para.lines.push_back(std::move(line));
    }
    para.height = para.lines.back().y1 + pad_l;
    return para;
}

} // namespace

const std::string& synth_alphabet()
{
    static const std::string alphabet = [] {
        std::string s;
        for (const auto& g : glyph_table())
            s.push_back(g.name);
        return s;
    }();
    return alphabet;
}

AnnotationTree generate_synthetic_sample(const SynthConfig& cfg, int index)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(index) * 0xBF58476D1CE4E5B9ULL + 1);
    const int canvas = cfg.canvas;
    const double margin = 4.0;

    for (int attempt = 0; attempt < 64; ++attempt) {
        const int n_para = uniform(rng, cfg.paragraphs);
        std::vector<ParagraphDraft> drafts;
        double total_h = 0;
        bool fits = true;
        for (int p = 0; p < n_para; ++p) {
            drafts.push_back(draft_paragraph(cfg, rng));
            total_h += drafts.back().height;
            if (drafts.back().width > canvas - 2 * margin)
                fits = false;
        }
        const double para_gap = 12.0;
        total_h += para_gap * (n_para - 1);
        if (!fits || total_h > canvas - 2 * margin)
            continue;

        // distribute vertical slack randomly between paragraphs
        double slack = canvas - 2 * margin - total_h;
        std::vector<double> offsets(n_para + 1);
        for (auto& o : offsets)
            o = std::uniform_real_distribution<double>(0, 1)(rng);
        const double norm = std::accumulate(offsets.begin(), offsets.end(), 0.0);
        double y = margin;
        AnnotationTree tree;
        tree.image_id = "synth_" + std::to_string(cfg.seed) + "_" + std::to_string(index);
        tree.width = canvas;
        tree.height = canvas;
        cv::Mat text_mask = cv::Mat::zeros(canvas, canvas, CV_8U);
        bool in_bounds = true;

        for (int p = 0; p < n_para; ++p) {
            const auto& d = drafts[p];
            y += std::floor(slack * offsets[p] / norm);
            const double x = margin + std::floor(std::uniform_real_distribution<double>(0, 1)(rng) *
                                                 (canvas - 2 * margin - d.width));
            const double angle = cfg.max_rotation_deg > 0
                                     ? std::uniform_real_distribution<double>(-cfg.max_rotation_deg,
                                                                             cfg.max_rotation_deg)(rng)
                                     : 0.0;
            const cv::Point2d center(x + d.width / 2, y + d.height / 2);
            cv::Matx23d rot = cv::getRotationMatrix2D(center, angle, 1.0);
            // translate draft frame to canvas then rotate about the paragraph center
            auto place = [&](double px, double py) {
                const double cx = px + x, cy = py + y;
                return cv::Point2d(rot(0, 0) * cx + rot(0, 1) * cy + rot(0, 2),
                                   rot(1, 0) * cx + rot(1, 1) * cy + rot(1, 2));
            };
            auto quad = [&](double x0, double y0, double x1, double y1) {
                Polygon poly{place(x0, y0), place(x1, y0), place(x1, y1), place(x0, y1)};
                if (angle != 0.0)
                    for (auto& v : poly)
                        v = cv::Point2d(std::round(v.x), std::round(v.y));
                for (const auto& v : poly)
                    if (v.x < 0 || v.y < 0 || v.x > canvas || v.y > canvas)
                        in_bounds = false;
                return poly;
            };

            Paragraph para;
            para.vertices = quad(0, 0, d.width, d.height);
            const int stroke = std::max(1, int(std::lround(cfg.stroke_ratio * d.glyph_h)));
            for (const auto& ld : d.lines) {
                Line line;
                line.vertices = quad(ld.x0, ld.y0, ld.x1, ld.y1);
                for (const auto& wd : ld.words) {
                    Word word;
                    word.vertices = quad(wd.x0, wd.y0, wd.x1, wd.y1);
                    word.text = wd.text;
                    word.legible = wd.legible;
                    for (const auto& g : wd.glyphs) {
                        const double inset = stroke / 2.0;
                        for (const auto& s : g.glyph->strokes) {
                            for (size_t k = 0; k + 1 < s.size(); ++k) {
                                auto map = [&](cv::Point2d u) {
                                    return place(g.x + inset + u.x * (g.w - 2 * inset),
                                                 g.y + inset + u.y * (g.h - 2 * inset));
                                };
                                const auto a = map(s[k]), b = map(s[k + 1]);
                                constexpr int shift = 4;
                                auto to_fixed = [](cv::Point2d v) {
                                    return cv::Point(cvRound((v.x - 0.5) * 16), cvRound((v.y - 0.5) * 16));
                                };
                                cv::line(text_mask, to_fixed(a), to_fixed(b), cv::Scalar(1), stroke, cv::LINE_8,
                                         shift);
                            }
                        }
                    }
                    if (!line.text.empty())
                        line.text += ' ';
                    line.text += word.text;
                    line.words.push_back(std::move(word));
                }
                para.lines.push_back(std::move(line));
            }
            tree.paragraphs.push_back(std::move(para));
            y += d.height + para_gap;
        }
        if (!in_bounds)
            continue;

        // keep text pixels inside their word boxes (thick line caps may poke out)
        BinaryMask text = BinaryMask::from_mat(text_mask);
        text &= words_mask(tree, canvas, canvas);
        tree.pixel_text = text;

        cv::Vec3b bg, fg;
        for (int c = 0; c < 3; ++c) {
            bg[c] = static_cast<uint8_t>(std::uniform_int_distribution<int>(170, 255)(rng));
            fg[c] = static_cast<uint8_t>(std::uniform_int_distribution<int>(0, 90)(rng));
        }
        cv::Mat image(canvas, canvas, CV_8UC3, cv::Scalar(bg[0], bg[1], bg[2]));
        image.setTo(cv::Scalar(fg[0], fg[1], fg[2]), text.view());
        if (cfg.noise) {
            cv::Mat noise(canvas, canvas, CV_16SC3);
            cv::RNG cv_rng(rng());
            cv_rng.fill(noise, cv::RNG::NORMAL, 0, 6);
            cv::Mat img16;
            image.convertTo(img16, CV_16SC3);
            img16 += noise;
            img16.convertTo(image, CV_8UC3);
        }
        tree.image = image;
        return tree;
    }
    throw DataError("synthetic layout infeasible for canvas " + std::to_string(canvas) + " after 64 attempts");
}

std::vector<AnnotationTree> generate_synthetic(const SynthConfig& cfg, int count)
{
    std::vector<AnnotationTree> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(generate_synthetic_sample(cfg, i));
    return out;
}

ConsistencyReport check_consistency(const AnnotationTree& tree, int dilation)
{
    ConsistencyReport r;
    const int w = tree.width, h = tree.height;
    for (size_t p = 0; p < tree.paragraphs.size(); ++p) {
        const auto pm = paragraph_mask(tree, p, w, h);
        for (size_t l = 0; l < tree.paragraphs[p].lines.size(); ++l) {
            const auto lm = line_mask(tree, {p, l}, w, h);
            if (lm.area() > 0)
                r.min_line_in_paragraph =
                    std::min(r.min_line_in_paragraph, double(intersection_area(lm, pm)) / lm.area());
            for (const auto& word : tree.paragraphs[p].lines[l].words) {
                const auto wm = rasterize(word.vertices, w, h);
                if (wm.area() > 0)
                    r.min_word_in_line = std::min(r.min_word_in_line, double(intersection_area(wm, lm)) / wm.area());
            }
        }
    }
    if (tree.pixel_text && tree.pixel_text->area() > 0) {
        cv::Mat dilated;
        const auto wm = words_mask(tree, w, h);
        cv::dilate(wm.view(), dilated, cv::getStructuringElement(cv::MORPH_RECT, {2 * dilation + 1, 2 * dilation + 1}));
        auto covered = BinaryMask::from_mat(dilated);
        const auto inside = intersection_area(*tree.pixel_text, covered);
        r.pixel_text_outside_words = 1.0 - double(inside) / tree.pixel_text->area();
    }
    return r;
}

} // namespace hisam
