// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Mask losses take logits and binary float targets of
// the same shape [B, y, x]; reductions are means over masks.
#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hisam/model.hpp"

namespace hisam {

/// Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t.
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets, double alpha = 0.25,
                         double gamma = 2.0);
/// Per mask 1 - (2 sum(p t) + 1) / (sum p + sum t + 1), averaged over masks.
torch::Tensor dice_loss(const torch::Tensor& logits, const torch::Tensor& targets);
/// Mean binary cross-entropy with logits.
torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& targets);
/// Mean of (iou_pred - IoU(logits > 0, targets))^2; the measured IoU carries
/// no gradient and is 1 when both masks are empty.
torch::Tensor iou_mse_loss(const torch::Tensor& iou_pred, const torch::Tensor& logits, const torch::Tensor& targets);

/// IoU of thresholded logits against targets per mask, [B].
torch::Tensor measured_iou(const torch::Tensor& logits, const torch::Tensor& targets);

/// Nearest-neighbour resize of binary targets [B, y, x] to size x size.
torch::Tensor resize_targets(const torch::Tensor& targets, int64_t size);

/// Throws ValidationError unless every value is 0 or 1.
void check_binary(const torch::Tensor& targets);

struct LossTerms {
    double focal = 0, dice = 0, bce = 0, mse = 0;
    nlohmann::ordered_json to_json() const;
};

struct LossBreakdown {
    double l_text = 0, l_word = 0, l_line = 0, l_para = 0, total = 0;
    LossTerms text_lr, text_hr, word_lr, word_hr, line, para;

    /// total - (l_text + l_word + l_line + 0.5 l_para)
    double composition_error() const { return total - (l_text + l_word + l_line + 0.5 * l_para); }
    nlohmann::ordered_json to_json() const;
};

struct TextLoss {
    torch::Tensor l_lr, l_hr, total;
    LossTerms lr_terms, hr_terms;
};

/// 20 focal + dice + iou-mse at each resolution; targets [B, S, S] at input
/// resolution. The HR term is zero when m_hr is undefined or hr_weight is 0.
TextLoss text_loss(const PixelTextOutput& out, const torch::Tensor& targets, double hr_weight = 1.0);

struct HierTargets {
    torch::Tensor word;   // [K, S, S] word kernels
    torch::Tensor line;   // [K, S, S]
    torch::Tensor para;   // [K, S, S]
};

struct HierLoss {
    torch::Tensor l_word, l_line, l_para;
    LossTerms word_lr, word_hr, line, para;
};

/// Word: bce + dice at LR and HR. Line and paragraph: bce + dice + iou-mse.
/// K = 0 yields zero losses.
HierLoss hierarchy_loss(const HierOutput& out, const HierTargets& targets);

/// total = l_text + l_word + l_line + 0.5 l_para
torch::Tensor combine_losses(const TextLoss& text, const HierLoss& hier, LossBreakdown* breakdown = nullptr);

} // namespace hisam
