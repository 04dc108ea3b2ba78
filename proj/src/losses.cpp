// SPDX-License-Identifier: Apache-2.0
#include "hisam/losses.hpp"

#include "hisam/errors.hpp"

namespace F = torch::nn::functional;

namespace hisam {

void check_binary(const torch::Tensor& targets)
{
    if (!targets.eq(0).logical_or(targets.eq(1)).all().item<bool>())
        throw ValidationError("mask targets must be binary");
}

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets, double alpha, double gamma)
{
    check_binary(targets);
    const auto p = torch::sigmoid(logits);
    const auto ce = F::binary_cross_entropy_with_logits(logits, targets,
                                                        F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
    const auto p_t = p * targets + (1 - p) * (1 - targets);
    const auto alpha_t = alpha * targets + (1 - alpha) * (1 - targets);
    return (alpha_t * (1 - p_t).pow(gamma) * ce).mean();
}

torch::Tensor dice_loss(const torch::Tensor& logits, const torch::Tensor& targets)
{
    check_binary(targets);
    const auto p = torch::sigmoid(logits).flatten(1);
    const auto t = targets.flatten(1);
    const auto num = 2 * (p * t).sum(1) + 1;
    const auto den = p.sum(1) + t.sum(1) + 1;
    return (1 - num / den).mean();
}

torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& targets)
{
    check_binary(targets);
    return F::binary_cross_entropy_with_logits(logits, targets);
}

torch::Tensor measured_iou(const torch::Tensor& logits, const torch::Tensor& targets)
{
    torch::NoGradGuard guard;
    const auto pred = (logits > 0).flatten(1).to(torch::kFloat);
    const auto t = targets.flatten(1);
    const auto inter = (pred * t).sum(1);
    const auto uni = pred.sum(1) + t.sum(1) - inter;
    return torch::where(uni > 0, inter / uni.clamp_min(1), torch::ones_like(uni));
}

torch::Tensor iou_mse_loss(const torch::Tensor& iou_pred, const torch::Tensor& logits, const torch::Tensor& targets)
{
    const auto target_iou = measured_iou(logits, targets);
    return (iou_pred.reshape({-1}) - target_iou).pow(2).mean();
}

torch::Tensor resize_targets(const torch::Tensor& targets, int64_t size)
{
    if (targets.size(-1) == size && targets.size(-2) == size)
        return targets;
    // nearest sampling at output pixel centers keeps the masks binary
    const int64_t h = targets.size(-2), w = targets.size(-1);
    auto idx = [](int64_t src, int64_t dst) {
        auto i = ((torch::arange(dst, torch::kDouble) + 0.5) * (double(src) / dst)).floor().to(torch::kLong);
        return i.clamp_max(src - 1);
    };
    return targets.index_select(-2, idx(h, size)).index_select(-1, idx(w, size));
}

nlohmann::ordered_json LossTerms::to_json() const
{
    return {{"focal", focal}, {"dice", dice}, {"bce", bce}, {"mse", mse}};
}

nlohmann::ordered_json LossBreakdown::to_json() const
{
    return {{"total", total},         {"l_text", l_text},           {"l_word", l_word},
            {"l_line", l_line},       {"l_para", l_para},           {"text_lr", text_lr.to_json()},
            {"text_hr", text_hr.to_json()}, {"word_lr", word_lr.to_json()}, {"word_hr", word_hr.to_json()},
            {"line", line.to_json()}, {"para", para.to_json()}};
}

namespace {

double scalar(const torch::Tensor& t) { return t.item<double>(); }

} // namespace

TextLoss text_loss(const PixelTextOutput& out, const torch::Tensor& targets, double hr_weight)
{
    TextLoss res;
    auto level = [&](const torch::Tensor& logits, LossTerms& terms) {
        const auto t = resize_targets(targets, logits.size(-1));
        const auto fl = focal_loss(logits, t);
        const auto dl = dice_loss(logits, t);
        const auto ml = iou_mse_loss(out.iou_pred, logits, t);
        terms.focal = scalar(fl);
        terms.dice = scalar(dl);
        terms.mse = scalar(ml);
        return 20.0 * fl + dl + ml;
    };
    res.l_lr = level(out.m_lr, res.lr_terms);
    if (out.m_hr.defined() && hr_weight != 0.0)
        res.l_hr = hr_weight * level(out.m_hr, res.hr_terms);
    else
        res.l_hr = torch::zeros({}, out.m_lr.options());
    res.total = res.l_lr + res.l_hr;
    return res;
}

HierLoss hierarchy_loss(const HierOutput& out, const HierTargets& targets)
{
    HierLoss res;
    if (out.size() == 0) {
        const auto zero = torch::zeros({});
        res.l_word = res.l_line = res.l_para = zero;
        return res;
    }
    auto bce_dice = [](const torch::Tensor& logits, const torch::Tensor& t, LossTerms& terms) {
        const auto b = bce_loss(logits, t);
        const auto d = dice_loss(logits, t);
        terms.bce = scalar(b);
        terms.dice = scalar(d);
        return b + d;
    };
    const int64_t lr = out.line.size(-1), whr = out.word_hr.size(-1);
    res.l_word = bce_dice(out.word_lr, resize_targets(targets.word, lr), res.word_lr) +
                 bce_dice(out.word_hr, resize_targets(targets.word, whr), res.word_hr);

    auto with_mse = [&](const torch::Tensor& logits, const torch::Tensor& full, const torch::Tensor& iou_pred,
                        LossTerms& terms) {
        const auto t = resize_targets(full, lr);
        const auto m = iou_mse_loss(iou_pred, logits, t);
        terms.mse = scalar(m);
        return bce_dice(logits, t, terms) + m;
    };
    res.l_line = with_mse(out.line, targets.line, out.iou.select(1, 1), res.line);
    res.l_para = with_mse(out.para, targets.para, out.iou.select(1, 2), res.para);
    return res;
}

torch::Tensor combine_losses(const TextLoss& text, const HierLoss& hier, LossBreakdown* breakdown)
{
    const auto total = text.total + hier.l_word + hier.l_line + 0.5 * hier.l_para;
    if (breakdown) {
        breakdown->l_text = scalar(text.total);
        breakdown->l_word = scalar(hier.l_word);
        breakdown->l_line = scalar(hier.l_line);
        breakdown->l_para = scalar(hier.l_para);
        // composed in double so the logged identity holds exactly
        breakdown->total = breakdown->l_text + breakdown->l_word + breakdown->l_line + 0.5 * breakdown->l_para;
        breakdown->text_lr = text.lr_terms;
        breakdown->text_hr = text.hr_terms;
        breakdown->word_lr = hier.word_lr;
        breakdown->word_hr = hier.word_hr;
        breakdown->line = hier.line;
        breakdown->para = hier.para;
    }
    return total;
}

} // namespace hisam
