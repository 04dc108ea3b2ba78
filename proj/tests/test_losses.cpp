// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>

#include "hisam/errors.hpp"
#include "hisam/losses.hpp"

using namespace hisam;

namespace {

torch::Tensor random_targets(std::vector<int64_t> shape)
{
    return (torch::rand(shape, torch::kDouble) > 0.5).to(torch::kDouble);
}

// Central differences of f at x, compared with autograd.
void check_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x)
{
    x = x.detach().clone().set_requires_grad(true);
    f(x).backward();
    const auto grad = x.grad().clone();
    torch::NoGradGuard guard;
    auto flat = x.view({-1});
    for (int64_t i = 0; i < flat.numel(); ++i) {
        const double h = 1e-6;
        const double orig = flat[i].item<double>();
        flat[i] = orig + h;
        const double plus = f(x).item<double>();
        flat[i] = orig - h;
        const double minus = f(x).item<double>();
        flat[i] = orig;
        const double fd = (plus - minus) / (2 * h);
        const double an = grad.view({-1})[i].item<double>();
        CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(fd), 1e-3));
    }
}

HierOutput hier_output(int64_t k)
{
    HierOutput out;
    out.word_lr = torch::randn({k, 64, 64});
    out.word_hr = torch::randn({k, 96, 96});
    out.line = torch::randn({k, 64, 64});
    out.para = torch::randn({k, 64, 64});
    out.iou = torch::rand({k, 3});
    return out;
}

HierTargets hier_targets(int64_t k)
{
    auto t = [&] { return (torch::rand({k, 256, 256}) > 0.7).to(torch::kFloat); };
    return {t(), t(), t()};
}

} // namespace

TEST_CASE("focal loss values")
{
    const double logit = std::log(0.9 / 0.1);
    const auto one = torch::ones({1, 1, 1});
    CHECK(focal_loss(torch::full({1, 1, 1}, logit), one).item<double>() ==
          doctest::Approx(0.25 * 0.01 * -std::log(0.9)).epsilon(1e-4));
    CHECK(focal_loss(torch::full({1, 1, 1}, logit), one).item<double>() == doctest::Approx(2.634e-4).epsilon(1e-3));
    CHECK(focal_loss(torch::full({1, 3, 3}, 100.0), torch::ones({1, 3, 3})).item<double>() == doctest::Approx(0.0));
    CHECK_THROWS_AS(focal_loss(torch::zeros({1, 2, 2}), torch::full({1, 2, 2}, 0.5)), ValidationError);
    CHECK_THROWS_AS(dice_loss(torch::zeros({1, 2, 2}), torch::full({1, 2, 2}, 2.0)), ValidationError);
    CHECK_THROWS_AS(bce_loss(torch::zeros({1, 2, 2}), torch::full({1, 2, 2}, -1.0)), ValidationError);
}

TEST_CASE("dice and BCE values")
{
    torch::manual_seed(1);
    const auto t = random_targets({2, 8, 8});
    CHECK(dice_loss(t * 200 - 100, t).item<double>() == doctest::Approx(0.0).epsilon(1e-9));
    const auto miss = dice_loss(torch::full({1, 100, 100}, 100.0), torch::zeros({1, 100, 100})).item<double>();
    CHECK(miss == doctest::Approx(1.0 - 1.0 / 10001.0));
    CHECK(bce_loss(torch::zeros({3, 4, 4}, torch::kDouble), random_targets({3, 4, 4})).item<double>() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(bce_loss(t * 200 - 100, t).item<double>() == doctest::Approx(0.0));
}

TEST_CASE("loss gradients match central differences")
{
    torch::manual_seed(2);
    for (int trial = 0; trial < 3; ++trial) {
        const auto x = torch::randn({2, 3, 3}, torch::kDouble) * 2;
        const auto t = random_targets({2, 3, 3});
        check_gradient([&](const torch::Tensor& v) { return focal_loss(v, t); }, x);
        check_gradient([&](const torch::Tensor& v) { return dice_loss(v, t); }, x);
        check_gradient([&](const torch::Tensor& v) { return bce_loss(v, t); }, x);
    }
}

TEST_CASE("IoU regression target")
{
    const auto t = torch::tensor({{{1.f, 1.f}, {0.f, 0.f}}});
    const auto logits = torch::tensor({{{5.f, -5.f}, {5.f, -5.f}}});
    // prediction covers (0,0) and (1,0): intersection 1, union 3
    CHECK(measured_iou(logits, t)[0].item<float>() == doctest::Approx(1.0 / 3));
    CHECK(iou_mse_loss(torch::tensor({1.f / 3}), logits, t).item<float>() == doctest::Approx(0.0));
    CHECK(iou_mse_loss(torch::tensor({0.5f}), logits, t).item<float>() == doctest::Approx(1.0 / 36));
    CHECK(iou_mse_loss(torch::tensor({1.f}), -logits.abs(), t).item<float>() == doctest::Approx(1.0));
    CHECK(measured_iou(torch::full({1, 2, 2}, -1.f), torch::zeros({1, 2, 2}))[0].item<float>() == 1.f);

    auto l = logits.clone().set_requires_grad(true);
    auto p = torch::tensor({0.2f}).set_requires_grad(true);
    iou_mse_loss(p, l, t).backward();
    CHECK(!l.grad().defined());
    CHECK(p.grad()[0].item<float>() == doctest::Approx(2 * (0.2 - 1.0 / 3)));
}

TEST_CASE("nearest target resize keeps masks binary")
{
    torch::manual_seed(3);
    const auto t = (torch::rand({2, 256, 256}) > 0.5).to(torch::kFloat);
    const auto small = resize_targets(t, 64);
    CHECK(small.sizes().vec() == std::vector<int64_t>{2, 64, 64});
    CHECK_NOTHROW(check_binary(small));
    CHECK(small[1][10][20].item<float>() == t[1][42][82].item<float>());
    CHECK(resize_targets(t, 256).equal(t));
}

TEST_CASE("text loss")
{
    torch::manual_seed(4);
    const auto t = (torch::rand({1, 256, 256}) > 0.5).to(torch::kFloat);
    PixelTextOutput out;
    out.m_lr = resize_targets(t, 64) * 200 - 100;
    out.m_hr = t * 200 - 100;
    out.iou_pred = torch::ones({1});

    SUBCASE("perfect prediction")
    {
        const auto loss = text_loss(out, t);
        CHECK(loss.total.item<double>() == doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("recombination and HR removal")
    {
        out.m_lr = torch::randn({1, 64, 64});
        out.m_hr = torch::randn({1, 256, 256});
        out.iou_pred = torch::rand({1});
        const auto loss = text_loss(out, t);
        const auto lr_t = resize_targets(t, 64);
        const double lr = 20 * focal_loss(out.m_lr, lr_t).item<double>() + dice_loss(out.m_lr, lr_t).item<double>() +
                          iou_mse_loss(out.iou_pred, out.m_lr, lr_t).item<double>();
        const double hr = 20 * focal_loss(out.m_hr, t).item<double>() + dice_loss(out.m_hr, t).item<double>() +
                          iou_mse_loss(out.iou_pred, out.m_hr, t).item<double>();
        CHECK(loss.l_lr.item<double>() == doctest::Approx(lr).epsilon(1e-6));
        CHECK(loss.l_hr.item<double>() == doctest::Approx(hr).epsilon(1e-6));
        CHECK(loss.lr_terms.focal == doctest::Approx(focal_loss(out.m_lr, lr_t).item<double>()));

        const auto no_hr = text_loss(out, t, 0.0);
        CHECK(no_hr.l_hr.item<double>() == 0.0);
        CHECK(no_hr.total.item<double>() == loss.l_lr.item<double>());
    }
    SUBCASE("focal weight is twenty")
    {
        // only the focal input varies: d total / d focal = 20
        out.m_lr = torch::randn({1, 64, 64}, torch::requires_grad());
        out.m_hr = torch::Tensor();
        const auto lr_t = resize_targets(t, 64);
        auto loss = text_loss(out, t);
        loss.total.backward();
        const auto g_total = out.m_lr.grad().clone();
        out.m_lr.mutable_grad() = torch::Tensor();
        (focal_loss(out.m_lr, lr_t) * 20 + dice_loss(out.m_lr, lr_t)).backward();
        CHECK(torch::allclose(g_total, out.m_lr.grad(), 1e-5, 1e-9));
    }
}

TEST_CASE("hierarchy loss")
{
    torch::manual_seed(5);
    SUBCASE("no prompts")
    {
        const auto loss = hierarchy_loss(hier_output(0), hier_targets(0));
        CHECK(loss.l_word.item<double>() == 0.0);
        CHECK(loss.l_line.item<double>() == 0.0);
        CHECK(loss.l_para.item<double>() == 0.0);
    }
    SUBCASE("perfect prediction")
    {
        const auto t = hier_targets(3);
        HierOutput out;
        out.word_lr = resize_targets(t.word, 64) * 200 - 100;
        out.word_hr = resize_targets(t.word, 96) * 200 - 100;
        out.line = resize_targets(t.line, 64) * 200 - 100;
        out.para = resize_targets(t.para, 64) * 200 - 100;
        out.iou = torch::ones({3, 3});
        const auto loss = hierarchy_loss(out, t);
        CHECK(loss.l_word.item<double>() == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(loss.l_line.item<double>() == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(loss.l_para.item<double>() == doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("blank targets push logits negative")
    {
        auto out = hier_output(1);
        out.line = out.line.detach().requires_grad_(true);
        HierTargets blank{torch::zeros({1, 256, 256}), torch::zeros({1, 256, 256}), torch::zeros({1, 256, 256})};
        hierarchy_loss(out, blank).l_line.backward();
        CHECK(out.line.grad().min().item<float>() > 0.f);
    }
    SUBCASE("random toy against hand recombination")
    {
        const auto out = hier_output(4);
        const auto t = hier_targets(4);
        const auto loss = hierarchy_loss(out, t);
        auto bd = [](const torch::Tensor& l, const torch::Tensor& g) {
            return bce_loss(l, g).item<double>() + dice_loss(l, g).item<double>();
        };
        const double word = bd(out.word_lr, resize_targets(t.word, 64)) + bd(out.word_hr, resize_targets(t.word, 96));
        const auto lt = resize_targets(t.line, 64), pt = resize_targets(t.para, 64);
        const double line = bd(out.line, lt) + iou_mse_loss(out.iou.select(1, 1), out.line, lt).item<double>();
        const double para = bd(out.para, pt) + iou_mse_loss(out.iou.select(1, 2), out.para, pt).item<double>();
        CHECK(loss.l_word.item<double>() == doctest::Approx(word).epsilon(1e-6));
        CHECK(loss.l_line.item<double>() == doctest::Approx(line).epsilon(1e-6));
        CHECK(loss.l_para.item<double>() == doctest::Approx(para).epsilon(1e-6));
        CHECK(loss.word_hr.mse == 0.0);
    }
}

TEST_CASE("loss composition")
{
    torch::manual_seed(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto t = (torch::rand({2, 256, 256}) > 0.5).to(torch::kFloat);
        PixelTextOutput text_out{torch::randn({2, 64, 64}), torch::randn({2, 256, 256}), torch::rand({2}), {}, {}};
        const auto text = text_loss(text_out, t);
        const auto hier = hierarchy_loss(hier_output(3), hier_targets(3));
        LossBreakdown b;
        const auto total = combine_losses(text, hier, &b);
        CHECK(b.composition_error() == 0.0);
        CHECK(std::abs(b.total - (b.l_text + b.l_word + b.l_line + 0.5 * b.l_para)) <= 1e-9);
        CHECK(total.item<double>() == doctest::Approx(b.total).epsilon(1e-6));
        for (double v : {b.l_text, b.l_word, b.l_line, b.l_para, b.total})
            CHECK(v >= 0.0);
        const auto j = b.to_json();
        CHECK(j.at("total").get<double>() == b.total);
        CHECK(j.at("text_hr").contains("focal"));
    }
}

TEST_CASE("own thresholded output scores better than a flipped target")
{
    torch::manual_seed(7);
    for (int trial = 0; trial < 10; ++trial) {
        const auto logits = torch::randn({1, 16, 16});
        const auto own = (logits > 0).to(torch::kFloat);
        const auto flipped = 1 - own;
        CHECK(bce_loss(logits, own).item<double>() <= bce_loss(logits, flipped).item<double>());
        CHECK(dice_loss(logits, own).item<double>() <= dice_loss(logits, flipped).item<double>());
        CHECK(focal_loss(logits, own).item<double>() <= focal_loss(logits, flipped).item<double>());
    }
}
