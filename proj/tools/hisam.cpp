// SPDX-License-Identifier: Apache-2.0
//
// hisam: synthetic data, training, evaluation, AMG dumps, auto-labelling and
// the annotation server.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime error.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hisam/checkpoint.hpp"
#include "hisam/data.hpp"
#include "hisam/errors.hpp"
#include "hisam/inference.hpp"
#include "hisam/metrics.hpp"
#include "hisam/service.hpp"
#include "hisam/train.hpp"

namespace fs = std::filesystem;
using namespace hisam;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

nlohmann::json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read " + path.string());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw ConfigError(path.string() + " is not valid JSON");
    return j;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << text << "\n";
}

cv::Mat read_rgb(const fs::path& path)
{
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty())
        throw DataError("cannot decode image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

std::vector<fs::path> list_images(const fs::path& p)
{
    if (!fs::exists(p))
        throw DataError(p.string() + " does not exist");
    if (!fs::is_directory(p))
        return {p};
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(p)) {
        auto ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void render_overlay(const cv::Mat& rgb, const AmgResult& r, const fs::path& path)
{
    cv::Mat out;
    cv::cvtColor(rgb, out, cv::COLOR_RGB2BGR);
    const cv::Scalar para(0, 140, 255), line(255, 80, 0), word(0, 200, 0);
    for (const auto& p : r.paragraphs) {
        std::vector<std::vector<cv::Point>> contours;
        cv::findContours(p.view().clone(), contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
        cv::drawContours(out, contours, -1, para, 2);
    }
    for (const auto& l : r.lines) {
        std::vector<std::vector<cv::Point>> contours;
        cv::findContours(l.view().clone(), contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
        cv::drawContours(out, contours, -1, line, 1);
    }
    for (const auto& group : r.words)
        for (const auto& w : group) {
            std::vector<cv::Point> pts;
            for (const auto& v : w.polygon)
                pts.emplace_back(cvRound(v.x - 0.5), cvRound(v.y - 0.5));
            cv::polylines(out, pts, true, word, 1);
        }
    cv::imwrite(path.string(), out);
}

std::string model_path_or_env(const std::string& given)
{
    if (!given.empty())
        return given;
    if (const char* env = std::getenv("HISAM_MODEL"))
        return env;
    throw ConfigError("no model given (use --model or HISAM_MODEL)");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out, config, split = "train";
    int count = 16;
    int64_t seed = -1;
};

int run_synth(const SynthArgs& a)
{
    SynthConfig cfg;
    if (!a.config.empty())
        cfg = read_json_file(a.config).get<SynthConfig>();
    if (a.seed >= 0)
        cfg.seed = static_cast<uint64_t>(a.seed);
    cfg.validate();
    auto trees = generate_synthetic(cfg, a.count);
    export_labels(trees, a.out, a.split);
    std::cout << "wrote " << trees.size() << " samples to " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string config, data, out, resume, log;
    int epochs = 0;
    double lr = 0;
};

int run_train(const TrainArgs& a)
{
    auto data = load_dataset_dir(a.data);
    std::unique_ptr<Trainer> trainer;
    if (!a.resume.empty()) {
        trainer = std::make_unique<Trainer>(Trainer::resume(a.resume));
    } else {
        TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
        if (a.epochs > 0) {
            cfg.epochs = a.epochs;
            if (cfg.lr_drop_epoch >= cfg.epochs)
                cfg.lr_drop_epoch = std::max(0, cfg.epochs * 9 / 10);
        }
        if (a.lr > 0)
            cfg.lr = a.lr;
        if (!a.log.empty())
            cfg.log_path = a.log;
        cfg.validate();
        trainer = std::make_unique<Trainer>(cfg);
    }
    const auto t0 = std::chrono::steady_clock::now();
    trainer->fit(data, [&](int epoch, const LossBreakdown& b) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "epoch " << epoch << "/" << trainer->cfg.epochs << " loss " << b.total << " (" << s << " s)\n"
                  << std::flush;
    });
    trainer->save(a.out);
    std::cout << "saved " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string model, data, out, predictions;
    int points = 0;
    bool ground_truth = false;
    bool sliding_window = false;
};

int run_eval(const EvalArgs& a)
{
    auto data = load_dataset_dir(a.data);
    AmgConfig cfg;
    if (a.points > 0)
        cfg.points = a.points;
    cfg.sliding_window = a.sliding_window;
    HiSam model{nullptr};
    if (a.predictions.empty() && !a.ground_truth) {
        model = load_model(model_path_or_env(a.model));
        model->eval();
    }
    Evaluator ev;
    for (const auto& tree : data) {
        AmgResult pred;
        if (a.ground_truth) {
            pred = tree_to_prediction(tree);
        } else if (!a.predictions.empty()) {
            const auto path = fs::path(a.predictions) / (tree.image_id + ".json");
            std::ifstream in(path);
            if (!in)
                throw DataError("missing prediction " + path.string());
            pred = prediction_from_json(ojson::parse(in));
        } else {
            if (tree.image.empty())
                throw DataError("image missing for " + tree.image_id);
            pred = amg(model, tree.image, cfg, tree.image_id);
        }
        ev.add(pred, tree);
    }
    const auto report = ev.report().dump(2);
    if (a.out.empty())
        std::cout << report << "\n";
    else
        write_text(a.out, report);
    return 0;
}

struct AmgArgs {
    std::string model, images, out;
    int points = 1500;
    int batch = 100;
    uint64_t seed = 0;
    bool overlay = false;
    bool sliding_window = false;
    bool para_nms = false;
};

int run_amg(const AmgArgs& a)
{
    auto model = load_model(model_path_or_env(a.model));
    model->eval();
    AmgConfig cfg;
    cfg.points = a.points;
    cfg.batch = a.batch;
    cfg.seed = a.seed;
    cfg.sliding_window = a.sliding_window;
    cfg.para_nms = a.para_nms;
    fs::create_directories(a.out);
    for (const auto& path : list_images(a.images)) {
        const auto rgb = read_rgb(path);
        const auto id = path.stem().string();
        auto res = amg(model, rgb, cfg, id);
        write_text(fs::path(a.out) / (id + ".json"), prediction_to_json(res).dump());
        if (a.overlay)
            render_overlay(rgb, res, fs::path(a.out) / (id + "_overlay.png"));
        std::cout << id << ": " << res.lines.size() << " lines, " << res.word_count() << " words, "
                  << res.layout.clusters.size() << " paragraphs\n";
    }
    return 0;
}

struct AutolabelArgs {
    std::string model, images, out;
    int window = 512;
    int stride = 384;
};

int run_autolabel(const AutolabelArgs& a)
{
    if (a.window <= 0 || a.stride <= 0 || a.stride > a.window)
        throw ConfigError("need 0 < stride <= window");
    auto model = load_model(model_path_or_env(a.model));
    model->eval();
    std::vector<AnnotationTree> drafts;
    for (const auto& path : list_images(a.images))
        drafts.push_back(autolabel_pixel_text(model, read_rgb(path), path.stem().string(), a.window, a.stride));
    export_labels(drafts, a.out, "draft");
    std::cout << "wrote " << drafts.size() << " drafts to " << a.out << "\n";
    return 0;
}

struct ServeArgs {
    std::string model, host = "127.0.0.1";
    int port = 0;
    int idle_minutes = 30;
};

int run_serve(const ServeArgs& a)
{
    ServiceConfig cfg;
    cfg.host = a.host;
    cfg.port = a.port > 0 ? a.port : 8080;
    if (a.port <= 0)
        if (const char* env = std::getenv("HISAM_PORT"))
            cfg.port = std::atoi(env);
    cfg.idle_timeout = std::chrono::minutes(a.idle_minutes);
    AnnotationService service(load_model(model_path_or_env(a.model)), cfg);
    std::cout << "listening on " << cfg.host << ":" << cfg.port << "\n" << std::flush;
    service.serve();
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hierarchical text segmentation: pixel text, words, lines and paragraphs"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic labelled dataset");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--count", synth.count, "Number of images")->check(CLI::PositiveNumber);
    c_synth->add_option("--seed", synth.seed, "Overrides the config seed");
    c_synth->add_option("--config", synth.config, "SynthConfig JSON");
    c_synth->add_option("--split", synth.split, "Split name in the manifest");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train on a dataset directory");
    c_train->add_option("--data", train.data, "Dataset directory (from synth or export)")->required();
    c_train->add_option("--out", train.out, "Checkpoint to write")->required();
    c_train->add_option("--config", train.config, "TrainConfig JSON");
    c_train->add_option("--epochs", train.epochs, "Override epochs");
    c_train->add_option("--lr", train.lr, "Override learning rate");
    c_train->add_option("--log", train.log, "JSON-lines training log");
    c_train->add_option("--resume", train.resume, "Continue from a training checkpoint");

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate all metric families on a dataset");
    c_eval->add_option("--data", eval.data, "Dataset directory")->required();
    c_eval->add_option("--model", eval.model, "Checkpoint (or HISAM_MODEL)");
    c_eval->add_option("--predictions", eval.predictions, "Directory of <image_id>.json prediction dumps");
    c_eval->add_flag("--ground-truth", eval.ground_truth, "Score the labels against themselves");
    c_eval->add_option("--points", eval.points, "AMG point count");
    c_eval->add_flag("--sliding-window", eval.sliding_window, "Tiled pixel-text inference");
    c_eval->add_option("--out", eval.out, "Metrics JSON path (default stdout)");

    AmgArgs amg_args;
    auto* c_amg = app.add_subcommand("amg", "Automatic mask generation to prediction dumps");
    c_amg->add_option("--model", amg_args.model, "Checkpoint (or HISAM_MODEL)");
    c_amg->add_option("--images", amg_args.images, "Image file or directory")->required();
    c_amg->add_option("--out", amg_args.out, "Output directory")->required();
    c_amg->add_option("--points", amg_args.points, "Sampled foreground points")->check(CLI::PositiveNumber);
    c_amg->add_option("--batch", amg_args.batch, "Points per decoder batch")->check(CLI::PositiveNumber);
    c_amg->add_option("--seed", amg_args.seed, "Point sampling seed");
    c_amg->add_flag("--overlay", amg_args.overlay, "Also write overlay renders");
    c_amg->add_flag("--sliding-window", amg_args.sliding_window, "Tiled pixel-text inference");
    c_amg->add_flag("--para-nms", amg_args.para_nms, "Extra NMS over paragraph masks");

    AutolabelArgs autolabel;
    auto* c_auto = app.add_subcommand("autolabel", "Draft pixel-text labels for review");
    c_auto->add_option("--model", autolabel.model, "Checkpoint (or HISAM_MODEL)");
    c_auto->add_option("--images", autolabel.images, "Image file or directory")->required();
    c_auto->add_option("--out", autolabel.out, "Output dataset directory")->required();
    c_auto->add_option("--window", autolabel.window, "Window side");
    c_auto->add_option("--stride", autolabel.stride, "Window stride");

    ServeArgs serve;
    auto* c_serve = app.add_subcommand("serve", "Start the annotation HTTP API");
    c_serve->add_option("--model", serve.model, "Checkpoint (or HISAM_MODEL)");
    c_serve->add_option("--host", serve.host, "Bind address");
    c_serve->add_option("--port", serve.port, "Port (or HISAM_PORT, default 8080)");
    c_serve->add_option("--idle-minutes", serve.idle_minutes, "Session idle timeout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*c_synth)
            return run_synth(synth);
        if (*c_train)
            return run_train(train);
        if (*c_eval)
            return run_eval(eval);
        if (*c_amg)
            return run_amg(amg_args);
        if (*c_auto)
            return run_autolabel(autolabel);
        if (*c_serve)
            return run_serve(serve);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << e.what() << "\n";
        return kExitData;
    } catch (const ValidationError& e) {
        std::cerr << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
