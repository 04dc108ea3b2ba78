// SPDX-License-Identifier: Apache-2.0
#include "hisam/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "hisam/checkpoint.hpp"
#include "hisam/errors.hpp"

using ojson = nlohmann::ordered_json;

namespace hisam {

void TrainConfig::validate() const
{
    ScaleProfile::by_name(profile);
    if (lines_per_image < 1 || points_per_line < 1)
        throw ConfigError("lines_per_image and points_per_line must be positive");
    if (lr < 0 || batch_size < 1 || epochs < 1)
        throw ConfigError("lr must be >= 0, batch_size and epochs positive");
    if (lr_drop_epoch < 0 || lr_drop_epoch >= epochs)
        throw ConfigError("lr_drop_epoch must lie in [0, epochs)");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || weight_decay < 0 || eps <= 0)
        throw ConfigError("invalid AdamW hyper-parameters");
    if (augment.scale_min <= 0 || augment.scale_max < augment.scale_min)
        throw ConfigError("invalid augmentation scale range");
    if (threads < 1)
        throw ConfigError("threads must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"profile", c.profile},
         {"model", c.model},
         {"lines_per_image", c.lines_per_image},
         {"points_per_line", c.points_per_line},
         {"lr", c.lr},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"lr_drop_epoch", c.lr_drop_epoch},
         {"betas", {c.beta1, c.beta2}},
         {"weight_decay", c.weight_decay},
         {"eps", c.eps},
         {"text_hr_weight", c.text_hr_weight},
         {"augment", c.augment},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every},
         {"checkpoint_dir", c.checkpoint_dir},
         {"log_path", c.log_path},
         {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    static const std::vector<std::string> known = {
        "profile", "model", "lines_per_image", "points_per_line", "lr", "batch_size", "epochs", "lr_drop_epoch",
        "betas", "weight_decay", "eps", "text_hr_weight", "augment", "seed", "checkpoint_every", "checkpoint_dir",
        "log_path", "threads"};
    if (!j.is_object())
        throw ConfigError("training config must be a JSON object");
    for (const auto& item : j.items())
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            throw ConfigError("unknown training config key '" + item.key() + "'");
    try {
        TrainConfig d;
        c.profile = j.value("profile", d.profile);
        c.model = j.contains("model") ? j.at("model").get<ModelOptions>() : d.model;
        c.lines_per_image = j.value("lines_per_image", d.lines_per_image);
        c.points_per_line = j.value("points_per_line", d.points_per_line);
        c.lr = j.value("lr", d.lr);
        c.batch_size = j.value("batch_size", d.batch_size);
        c.epochs = j.value("epochs", d.epochs);
        c.lr_drop_epoch = j.value("lr_drop_epoch", d.lr_drop_epoch);
        if (j.contains("betas")) {
            c.beta1 = j.at("betas").at(0).get<double>();
            c.beta2 = j.at("betas").at(1).get<double>();
        }
        c.weight_decay = j.value("weight_decay", d.weight_decay);
        c.eps = j.value("eps", d.eps);
        c.text_hr_weight = j.value("text_hr_weight", d.text_hr_weight);
        c.augment = j.contains("augment") ? j.at("augment").get<AugmentConfig>() : d.augment;
        c.seed = j.value("seed", d.seed);
        c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
        c.checkpoint_dir = j.value("checkpoint_dir", d.checkpoint_dir);
        c.log_path = j.value("log_path", d.log_path);
        c.threads = j.value("threads", d.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
}

TrainConfig load_train_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    auto cfg = j.get<TrainConfig>();
    cfg.validate();
    return cfg;
}

torch::Tensor image_to_input(const cv::Mat& rgb, const ScaleProfile& profile)
{
    if (rgb.empty() || rgb.type() != CV_8UC3)
        throw ValidationError("expected an 8-bit RGB image");
    cv::Mat img = rgb;
    if (img.cols != profile.input_size || img.rows != profile.input_size)
        cv::resize(rgb, img, cv::Size(profile.input_size, profile.input_size), 0, 0, cv::INTER_LINEAR);
    if (!img.isContinuous())
        img = img.clone();
    auto t = torch::from_blob(img.data, {img.rows, img.cols, 3}, torch::kUInt8).clone();
    return normalize_image(t, profile);
}

namespace {

torch::Tensor mask_tensor(const BinaryMask& m)
{
    auto t = torch::empty({m.height(), m.width()}, torch::kFloat);
    auto* dst = t.data_ptr<float>();
    auto src = m.data();
    for (size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i];
    return t;
}

HierOutput concat(const std::vector<HierOutput>& parts)
{
    auto cat = [&](torch::Tensor HierOutput::*member) {
        std::vector<torch::Tensor> ts;
        for (const auto& p : parts)
            ts.push_back(p.*member);
        return torch::cat(ts, 0);
    };
    HierOutput out;
    out.word_lr = cat(&HierOutput::word_lr);
    out.word_hr = cat(&HierOutput::word_hr);
    out.line = cat(&HierOutput::line);
    out.para = cat(&HierOutput::para);
    out.iou = cat(&HierOutput::iou);
    return out;
}

} // namespace

Trainer::Trainer(TrainConfig c) : cfg(std::move(c)), rng(cfg.seed)
{
    cfg.validate();
    torch::manual_seed(cfg.seed);
    model = HiSam(ScaleProfile::by_name(cfg.profile), cfg.model);
    init_optimizer();
}

Trainer::Trainer(TrainConfig c, HiSam m) : model(std::move(m)), cfg(std::move(c)), rng(cfg.seed)
{
    cfg.validate();
    init_optimizer();
}

void Trainer::init_optimizer()
{
    at::set_num_threads(cfg.threads);
    apply_freeze(*model);
    params_ = model->trainable_parameters();
    std::vector<torch::Tensor> ps;
    for (auto& [name, p] : params_)
        ps.push_back(p);
    torch::optim::AdamWOptions opts(cfg.lr);
    opts.betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay).eps(cfg.eps);
    opt_ = std::make_unique<torch::optim::AdamW>(ps, opts);
}

double Trainer::lr_for_epoch(int e) const
{
    return e >= cfg.lr_drop_epoch ? cfg.lr / 10.0 : cfg.lr;
}

LossBreakdown Trainer::step(const std::vector<const AnnotationTree*>& batch, double lr)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto& profile = model->profile;
    const int size = profile.input_size;

    std::vector<torch::Tensor> images, text_targets, points;
    std::vector<HierTargets> hier_targets;
    for (const auto* tree : batch) {
        if (tree->image.empty())
            throw DataError(tree->image_id + ": training sample without an image");
        const auto aug = augment(*tree, cfg.augment, size, rng);
        images.push_back(image_to_input(aug.image, profile));
        text_targets.push_back(mask_tensor(aug.pixel_text ? *aug.pixel_text : words_mask(aug, size, size)));
        const auto prompts = sample_training_prompts(aug, cfg.lines_per_image, cfg.points_per_line, rng);
        auto pts = torch::empty({int64_t(prompts.size()), 2});
        HierTargets ht;
        std::vector<torch::Tensor> w, l, p;
        for (size_t i = 0; i < prompts.size(); ++i) {
            pts[i][0] = prompts[i].point.x;
            pts[i][1] = prompts[i].point.y;
            w.push_back(mask_tensor(prompts[i].word_target));
            l.push_back(mask_tensor(prompts[i].line_target));
            p.push_back(mask_tensor(prompts[i].para_target));
        }
        points.push_back(pts);
        hier_targets.push_back({torch::stack(w), torch::stack(l), torch::stack(p)});
    }

    const auto embedding = model->embed(torch::cat(images, 0));
    const auto text_out = model->segment_text(embedding);
    const auto text = text_loss(text_out, torch::stack(text_targets), cfg.text_hr_weight);

    std::vector<HierOutput> outs;
    for (size_t b = 0; b < batch.size(); ++b)
        outs.push_back(model->decode_points(embedding.slice(0, b, b + 1), points[b]));
    auto cat_targets = [&](torch::Tensor HierTargets::*member) {
        std::vector<torch::Tensor> v;
        for (const auto& h : hier_targets)
            v.push_back(h.*member);
        return torch::cat(v, 0);
    };
    const HierTargets all{cat_targets(&HierTargets::word), cat_targets(&HierTargets::line),
                          cat_targets(&HierTargets::para)};
    const auto hier = hierarchy_loss(concat(outs), all);

    LossBreakdown breakdown;
    auto total = combine_losses(text, hier, &breakdown);
    if (!std::isfinite(breakdown.total)) {
        ojson dump;
        dump["step"] = global_step;
        dump["epoch"] = epoch;
        dump["images"] = ojson::array();
        for (const auto* t : batch)
            dump["images"].push_back(t->image_id);
        dump["loss"] = breakdown.to_json();
        if (!cfg.log_path.empty()) {
            const auto path = std::filesystem::path(cfg.log_path).parent_path() / "nan_batch.json";
            std::ofstream(path) << dump.dump(2) << "\n";
        }
        throw TrainingError("non-finite loss at step " + std::to_string(global_step) + ": " + dump["images"].dump());
    }

    opt_->zero_grad();
    total.backward();
    for (auto& group : opt_->param_groups())
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    opt_->step();
    ++global_step;

    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log_step(breakdown, lr, ms, batch);
    return breakdown;
}

void Trainer::log_step(const LossBreakdown& b, double lr, double ms, const std::vector<const AnnotationTree*>& batch)
{
    if (cfg.log_path.empty())
        return;
    ojson j;
    j["step"] = global_step;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["loss"] = b.to_json();
    j["images"] = ojson::array();
    for (const auto* t : batch)
        j["images"].push_back(t->image_id);
    j["time_ms"] = ms;
    std::ofstream(cfg.log_path, std::ios::app) << j.dump() << "\n";
}

void Trainer::fit(const std::vector<AnnotationTree>& data, const EpochCallback& on_epoch)
{
    if (data.empty())
        throw DataError("empty training set");
    LossBreakdown last;
    while (epoch < cfg.epochs) {
        if (epoch_order_.size() != data.size() || batch_cursor_ == 0) {
            epoch_order_.resize(data.size());
            std::iota(epoch_order_.begin(), epoch_order_.end(), size_t{0});
            std::shuffle(epoch_order_.begin(), epoch_order_.end(), rng);
            batch_cursor_ = 0;
        }
        while (batch_cursor_ < epoch_order_.size()) {
            std::vector<const AnnotationTree*> batch;
            for (size_t i = batch_cursor_; i < std::min(epoch_order_.size(), batch_cursor_ + cfg.batch_size); ++i)
                batch.push_back(&data[epoch_order_[i]]);
            last = step(batch, lr_for_epoch(epoch));
            batch_cursor_ += batch.size();
        }
        batch_cursor_ = 0;
        ++epoch;
        if (on_epoch)
            on_epoch(epoch, last);
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            save(std::filesystem::path(cfg.checkpoint_dir) / ("epoch_" + std::to_string(epoch) + ".ckpt"));
        }
    }
}

void Trainer::save(const std::filesystem::path& path) const
{
    auto manifest = model_manifest(*model);
    manifest["step"] = global_step;
    manifest["epoch"] = epoch;
    manifest["train_config"] = nlohmann::json(cfg);
    std::ostringstream rs;
    rs << rng;
    manifest["rng"] = rs.str();
    manifest["epoch_order"] = epoch_order_;
    manifest["batch_cursor"] = batch_cursor_;

    auto tensors = model_state(*model);
    ojson opt_steps = ojson::object();
    for (const auto& [name, p] : params_) {
        auto& state = opt_->state();
        auto it = state.find(p.unsafeGetTensorImpl());
        if (it == state.end())
            continue;
        auto& s = static_cast<torch::optim::AdamWParamState&>(*it->second);
        tensors.emplace_back("optim.exp_avg." + name, s.exp_avg());
        tensors.emplace_back("optim.exp_avg_sq." + name, s.exp_avg_sq());
        opt_steps[name] = s.step();
    }
    manifest["optim_steps"] = std::move(opt_steps);
    write_archive(path, std::move(manifest), tensors);
}

Trainer Trainer::resume(const std::filesystem::path& path)
{
    const auto ar = read_archive(path);
    if (!ar.manifest.contains("train_config"))
        throw DataError(path.string() + " holds no training state");
    auto cfg = nlohmann::json(ar.manifest.at("train_config")).get<TrainConfig>();
    Trainer t(cfg, model_from_archive(ar));
    t.global_step = ar.manifest.at("step").get<int64_t>();
    t.epoch = ar.manifest.at("epoch").get<int>();
    std::istringstream rs(ar.manifest.at("rng").get<std::string>());
    rs >> t.rng;
    t.epoch_order_ = ar.manifest.at("epoch_order").get<std::vector<size_t>>();
    t.batch_cursor_ = ar.manifest.at("batch_cursor").get<size_t>();
    const auto& steps = ar.manifest.at("optim_steps");
    for (const auto& [name, p] : t.params_) {
        if (!steps.contains(name))
            continue;
        auto s = std::make_unique<torch::optim::AdamWParamState>();
        s->step(steps.at(name).get<int64_t>());
        s->exp_avg(ar.tensors.at("optim.exp_avg." + name).clone());
        s->exp_avg_sq(ar.tensors.at("optim.exp_avg_sq." + name).clone());
        t.opt_->state()[p.unsafeGetTensorImpl()] = std::move(s);
    }
    return t;
}

} // namespace hisam
