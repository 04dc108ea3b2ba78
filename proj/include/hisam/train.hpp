// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: AdamW over the trainable parameter set, a step learning
// rate drop, JSON-lines logging and resumable checkpoints.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hisam/data.hpp"
#include "hisam/losses.hpp"
#include "hisam/model.hpp"
#include "hisam/sampling.hpp"

namespace hisam {

struct TrainConfig {
    std::string profile = "desk";
    ModelOptions model;
    int lines_per_image = 10;
    int points_per_line = 2;
    double lr = 1e-4;
    int batch_size = 2;
    int epochs = 200;
    int lr_drop_epoch = 180;        // lr /= 10 from this epoch on
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.05;
    double eps = 1e-8;
    double text_hr_weight = 1.0;    // 0 removes the HR text loss
    AugmentConfig augment;
    uint64_t seed = 0;
    int checkpoint_every = 0;       // epochs; 0 = only at the end
    std::string checkpoint_dir;     // where periodic checkpoints go
    std::string log_path;           // JSON lines; empty = no log
    int threads = 1;

    /// Throws ConfigError on non-positive sizes or lr_drop_epoch >= epochs.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
/// Reads a JSON config file; unknown keys are rejected.
TrainConfig load_train_config(const std::filesystem::path& path);

/// uint8 RGB cv::Mat -> normalized [1, 3, S, S], resizing to the profile's input size.
torch::Tensor image_to_input(const cv::Mat& rgb, const ScaleProfile& profile);

class Trainer {
public:
    /// Builds a fresh model seeded from cfg.seed.
    explicit Trainer(TrainConfig cfg);
    /// Continue from an existing model (weights are not copied).
    Trainer(TrainConfig cfg, HiSam model);

    /// One optimizer step on a batch of trees at learning rate `lr`.
    LossBreakdown step(const std::vector<const AnnotationTree*>& batch, double lr);
    /// Learning rate in effect for an epoch.
    double lr_for_epoch(int epoch) const;

    using EpochCallback = std::function<void(int epoch, const LossBreakdown& last)>;
    /// Train until cfg.epochs; resumes mid-epoch after resume().
    void fit(const std::vector<AnnotationTree>& data, const EpochCallback& on_epoch = {});

    void save(const std::filesystem::path& path) const;
    static Trainer resume(const std::filesystem::path& path);

    HiSam model{nullptr};
    TrainConfig cfg;
    int64_t global_step = 0;
    int epoch = 0;
    std::mt19937_64 rng;

private:
    void init_optimizer();
    void log_step(const LossBreakdown& b, double lr, double ms, const std::vector<const AnnotationTree*>& batch);

    std::unique_ptr<torch::optim::AdamW> opt_;
    std::vector<std::pair<std::string, torch::Tensor>> params_;
    std::vector<size_t> epoch_order_;
    size_t batch_cursor_ = 0;
};

} // namespace hisam
