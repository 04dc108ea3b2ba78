// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include <unistd.h>

#include "hisam/checkpoint.hpp"
#include "hisam/errors.hpp"
#include "hisam/model.hpp"

using namespace hisam;
using torch::indexing::Slice;

namespace {

std::vector<int64_t> shape(const torch::Tensor& t)
{
    return t.sizes().vec();
}

std::filesystem::path temp_file(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("hisam_test_" + std::to_string(::getpid()) + "_" + name);
}

// Independent 3x3 / padding 1 convolution for [1, Cin, H, W] input.
torch::Tensor conv3x3_loop(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& b)
{
    const auto cin = x.size(1), h = x.size(2), wd = x.size(3), cout = w.size(0);
    auto out = torch::zeros({1, cout, h, wd}, torch::kDouble);
    auto xa = x.to(torch::kDouble);
    auto wa = w.to(torch::kDouble);
    auto ba = b.to(torch::kDouble);
    for (int64_t o = 0; o < cout; ++o)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < wd; ++xx) {
                double acc = ba[o].item<double>();
                for (int64_t i = 0; i < cin; ++i)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int64_t sy = y + ky - 1, sx = xx + kx - 1;
                            if (sy < 0 || sx < 0 || sy >= h || sx >= wd)
                                continue;
                            acc += wa[o][i][ky][kx].item<double>() * xa[0][i][sy][sx].item<double>();
                        }
                out[0][o][y][xx] = acc;
            }
    return out;
}

double gelu(double v)
{
    return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
}

// sum_d vec[b][d] * feat[b][d][y][x] by explicit loops
torch::Tensor dot_loop(const torch::Tensor& vec, const torch::Tensor& feat)
{
    auto v = vec.to(torch::kDouble).contiguous();
    auto f = feat.to(torch::kDouble).contiguous();
    const auto b = f.size(0), d = f.size(1), h = f.size(2), w = f.size(3);
    auto out = torch::zeros({b, h, w}, torch::kDouble);
    auto va = v.accessor<double, 2>();
    auto fa = f.accessor<double, 4>();
    auto oa = out.accessor<double, 3>();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0;
                for (int64_t k = 0; k < d; ++k)
                    acc += va[i][k] * fa[i][k][y][x];
                oa[i][y][x] = acc;
            }
    return out;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b)
{
    return (a.to(torch::kDouble) - b.to(torch::kDouble)).abs().max().item<double>();
}

} // namespace

TEST_CASE("desk profile feature shapes")
{
    torch::NoGradGuard guard;
    torch::manual_seed(0);
    HiSam model(ScaleProfile::desk());
    const auto emb = model->embed(torch::randn({1, 3, 256, 256}));
    CHECK(shape(emb) == std::vector<int64_t>{1, 64, 16, 16});

    const auto text = model->segment_text(emb);
    CHECK(shape(text.m_lr) == std::vector<int64_t>{1, 64, 64});
    CHECK(shape(text.m_hr) == std::vector<int64_t>{1, 256, 256});
    CHECK(shape(text.features_lr) == std::vector<int64_t>{1, 8, 64, 64});
    CHECK(shape(model->s_decoder->upsample_mask_features(text.features_lr)) == std::vector<int64_t>{1, 4, 256, 256});
    CHECK(shape(text.updated_token) == std::vector<int64_t>{1, 64});
    CHECK(shape(model->self_prompt(emb)) == std::vector<int64_t>{1, 12, 64});

    const auto hier = model->decode_points(emb, torch::tensor({{10.f, 20.f}, {100.f, 30.f}, {5.f, 250.f}}));
    CHECK(shape(hier.word_lr) == std::vector<int64_t>{3, 64, 64});
    CHECK(shape(hier.word_hr) == std::vector<int64_t>{3, 96, 96});
    CHECK(shape(hier.line) == std::vector<int64_t>{3, 64, 64});
    CHECK(shape(hier.para) == std::vector<int64_t>{3, 64, 64});
    CHECK(shape(hier.iou) == std::vector<int64_t>{3, 3});
    CHECK(shape(hier.tokens) == std::vector<int64_t>{3, 3, 64});
}

TEST_CASE("full profile feature shapes")
{
    torch::NoGradGuard guard;
    torch::manual_seed(0);
    const auto full = ScaleProfile::full();
    CHECK(full.embed_hw() == 64);
    CHECK(full.lr_mask_size() == 256);
    CHECK(full.hr_mask_size() == 1024);
    CHECK(full.lr_mask_dim() == 32);
    CHECK(full.hr_mask_dim() == 16);
    CHECK(full.word_hr_size() == 384);
    CHECK(full.adapter_bottleneck() == 192);

    // a single windowed block keeps the forward affordable at 1024 input
    auto shallow = full;
    shallow.vit_depth = 1;
    shallow.vit_global_every = 0;
    ImageEncoder encoder(shallow);
    CHECK(shape(encoder(torch::randn({1, 3, 1024, 1024}))) == std::vector<int64_t>{1, 256, 64, 64});

    PromptEncoder prompts(full);
    SDecoder s(full);
    const auto emb = torch::randn({1, 256, 64, 64});
    const auto out = s(emb, prompts->dense_pe(), torch::randn({1, 12, 256}));
    CHECK(shape(out.m_lr) == std::vector<int64_t>{1, 256, 256});
    CHECK(shape(out.m_hr) == std::vector<int64_t>{1, 1024, 1024});

    HDecoder h(full);
    const auto hier = h(emb, prompts->dense_pe(), prompts->dense_no_mask(),
                        prompts->encode_points(torch::tensor({{512.f, 512.f}})));
    CHECK(shape(hier.line) == std::vector<int64_t>{1, 256, 256});
    CHECK(shape(hier.word_hr) == std::vector<int64_t>{1, 384, 384});
}

TEST_CASE("input validation")
{
    torch::NoGradGuard guard;
    HiSam model(ScaleProfile::desk());
    CHECK_THROWS_AS(model->embed(torch::zeros({1, 3, 128, 128})), ConfigError);
    auto bad = torch::zeros({1, 3, 256, 256});
    bad[0][1][5][5] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(model->embed(bad), ValidationError);
    CHECK_THROWS_AS(normalize_image(torch::zeros({200, 256, 3}, torch::kUInt8), model->profile), ConfigError);
    const auto emb = model->embed(torch::zeros({1, 3, 256, 256}));
    CHECK_THROWS_AS(model->s_decoder(emb, model->prompt_encoder->dense_pe(), torch::zeros({1, 12, 32})), ConfigError);
    CHECK_THROWS_AS(model->h_decoder(emb, model->prompt_encoder->dense_pe(), model->prompt_encoder->dense_no_mask(),
                                     torch::zeros({2, 3, 64})),
                    ConfigError);
    auto odd = ScaleProfile::desk();
    odd.n_out = 4;
    CHECK_THROWS_AS(static_cast<void>(HiSam(odd)), ConfigError);
}

TEST_CASE("zero-initialized adapters reproduce the frozen encoder")
{
    torch::NoGradGuard guard;
    torch::manual_seed(11);
    HiSam model(ScaleProfile::desk());
    for (const auto& [name, p] : model->trainable_parameters())
        if (name.find(".up.") != std::string::npos && name.rfind("encoder.", 0) == 0)
            CHECK(p.abs().max().item<float>() == 0.f);
    for (int i = 0; i < 3; ++i) {
        const auto x = torch::randn({1, 3, 256, 256});
        model->encoder->set_adapters_enabled(true);
        const auto adapted = model->encoder(x);
        model->encoder->set_adapters_enabled(false);
        const auto frozen = model->encoder(x);
        CHECK(torch::equal(adapted, frozen));
    }
}

TEST_CASE("adapter residual")
{
    torch::NoGradGuard guard;
    SUBCASE("hand example")
    {
        Adapter a(2, 2, true);
        a->down->weight.copy_(torch::eye(2));
        a->down->bias.zero_();
        a->up->weight.copy_(torch::eye(2));
        a->up->bias.zero_();
        const auto y = adapter_forward(torch::tensor({1.f, -2.f}), a);
        CHECK(y[0].item<float>() == 2.f);
        CHECK(y[1].item<float>() == -2.f);
    }
    SUBCASE("zero up-projection is the identity")
    {
        Adapter a(8, 2, true);
        const auto x = torch::randn({5, 8});
        CHECK(torch::equal(adapter_forward(x, a), x));
        CHECK(torch::equal(a(x), x));
    }
    SUBCASE("width mismatch")
    {
        Adapter a(8, 2, true);
        CHECK_THROWS_AS(adapter_forward(torch::randn({2, 6}), a), ValidationError);
        CHECK_THROWS_AS(Adapter(8, 0, true), ConfigError);
    }
}

TEST_CASE("adapter gradients match central differences")
{
    torch::manual_seed(2);
    Adapter a(4, 2, true);
    a->to(torch::kDouble);
    {
        torch::NoGradGuard guard;
        a->up->weight.normal_();
        a->up->bias.normal_();
    }
    const auto x = torch::randn({3, 4}, torch::kDouble);
    const auto target = torch::randn({3, 4}, torch::kDouble);
    auto loss_fn = [&] { return (adapter_forward(x, a) - target).pow(2).sum(); };

    for (auto& p : a->parameters())
        p.mutable_grad() = torch::Tensor();
    loss_fn().backward();
    for (auto& p : a->parameters()) {
        const auto grad = p.grad().clone();
        auto flat = p.data().view({-1});
        for (int64_t i = 0; i < flat.numel(); ++i) {
            const double h = 1e-6;
            const double orig = flat[i].item<double>();
            double plus, minus;
            {
                torch::NoGradGuard guard;
                flat[i] = orig + h;
                plus = loss_fn().item<double>();
                flat[i] = orig - h;
                minus = loss_fn().item<double>();
                flat[i] = orig;
            }
            const double fd = (plus - minus) / (2 * h);
            const double an = grad.view({-1})[i].item<double>();
            CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("point encoding")
{
    torch::NoGradGuard guard;
    torch::manual_seed(4);
    HiSam model(ScaleProfile::desk());
    const auto& enc = model->prompt_encoder;

    CHECK(shape(encode_points(enc, {})) == std::vector<int64_t>{0, 2, 64});

    const auto same = encode_points(enc, {{40.f, 70.f}, {40.f, 70.f}});
    CHECK(torch::equal(same[0], same[1]));

    const auto two = encode_points(enc, {{40.f, 70.f}, {200.f, 10.f}});
    CHECK(!torch::equal(two[0][0], two[1][0]));
    CHECK(torch::equal(two[0][1], two[1][1]));   // padding token carries no position

    // direct evaluation of the random Fourier features
    const auto g = enc->gaussian.to(torch::kDouble);
    for (int k = 0; k < 2; ++k) {
        const double px = k == 0 ? 40.0 : 200.0, py = k == 0 ? 70.0 : 10.0;
        const double ux = 2 * (px + 0.5) / 256 - 1, uy = 2 * (py + 0.5) / 256 - 1;
        for (int c = 0; c < 32; ++c) {
            const double arg = 2 * M_PI * (ux * g[0][c].item<double>() + uy * g[1][c].item<double>());
            const double fg_s = enc->fg_point_embed[0][c].item<double>();
            const double fg_c = enc->fg_point_embed[0][c + 32].item<double>();
            CHECK(two[k][0][c].item<double>() == doctest::Approx(std::sin(arg) + fg_s).epsilon(1e-5));
            CHECK(two[k][0][c + 32].item<double>() == doctest::Approx(std::cos(arg) + fg_c).epsilon(1e-5));
        }
    }

    CHECK_THROWS_AS(encode_points(enc, {{256.f, 3.f}}), ValidationError);
    CHECK_THROWS_AS(encode_points(enc, {{3.f, -0.5f}}), ValidationError);
    for (const auto& p : enc->parameters())
        CHECK(!p.requires_grad());
}

TEST_CASE("spatial attention")
{
    torch::NoGradGuard guard;
    torch::manual_seed(5);
    const auto desk = ScaleProfile::desk();
    SUBCASE("zero conv block gives 0.5 everywhere")
    {
        SelfPrompt sp(desk);
        for (auto& p : sp->conv_block->parameters())
            p.zero_();
        const auto a = sp->spatial_attention(torch::randn({1, 64, 16, 16}));
        CHECK(torch::allclose(a, torch::full_like(a, 0.5)));
    }
    SUBCASE("strictly inside the unit interval")
    {
        SelfPrompt sp(desk);
        const auto a = sp->spatial_attention(torch::randn({2, 64, 16, 16}) * 3);
        CHECK(shape(a) == std::vector<int64_t>{2, 12, 16, 16});
        CHECK(a.min().item<float>() > 0.f);
        CHECK(a.max().item<float>() < 1.f);
    }
    SUBCASE("straight-line oracle on a 2x2x4 embedding")
    {
        ScaleProfile tiny = desk;
        tiny.embed_dim = 4;
        tiny.prompt_token_count = 2;
        tiny.decoder_heads = 2;
        SelfPrompt sp(tiny);
        const auto x = torch::randn({1, 4, 2, 2});
        auto ref = x.to(torch::kDouble);
        for (int i = 0; i < 4; ++i) {
            if (i > 0) {
                auto acc = ref.accessor<double, 4>();
                for (int64_t c = 0; c < ref.size(1); ++c)
                    for (int y = 0; y < 2; ++y)
                        for (int xx = 0; xx < 2; ++xx)
                            acc[0][c][y][xx] = gelu(acc[0][c][y][xx]);
            }
            auto conv = sp->conv_block[i]->as<torch::nn::Conv2d>();
            ref = conv3x3_loop(ref, conv->weight, conv->bias);
        }
        ref = 1.0 / (1.0 + torch::exp(-ref));
        CHECK(max_abs_diff(sp->spatial_attention(x), ref) < 1e-6);
    }
}

TEST_CASE("tokenize matches a loop oracle")
{
    torch::NoGradGuard guard;
    torch::manual_seed(6);
    SUBCASE("factorization and constants")
    {
        const auto c = torch::randn({64});
        const auto emb = c.view({1, 64, 1, 1}).expand({1, 64, 16, 16}).contiguous();
        const auto a = torch::rand({1, 12, 16, 16});
        const auto t = SelfPromptImpl::tokenize(emb, a);
        const auto expect = a.mean({2, 3}).view({1, 12, 1}) * c.view({1, 1, 64});
        CHECK(max_abs_diff(t, expect) < 1e-6);
        const auto half = SelfPromptImpl::tokenize(torch::ones({1, 64, 16, 16}), torch::full({1, 12, 16, 16}, 0.5));
        CHECK(max_abs_diff(half, torch::full_like(half, 0.5)) < 1e-7);
    }
    SUBCASE("3x3x4 toy")
    {
        const auto emb = torch::randn({1, 4, 3, 3});
        const auto a = torch::rand({1, 2, 3, 3});
        const auto t = SelfPromptImpl::tokenize(emb, a);
        for (int k = 0; k < 2; ++k)
            for (int c = 0; c < 4; ++c) {
                double acc = 0;
                for (int y = 0; y < 3; ++y)
                    for (int x = 0; x < 3; ++x)
                        acc += a[0][k][y][x].item<double>() * emb[0][c][y][x].item<double>();
                CHECK(std::abs(t[0][k][c].item<double>() - acc / 9) < 1e-6);
            }
    }
    SUBCASE("shape disagreement")
    {
        CHECK_THROWS_AS(SelfPromptImpl::tokenize(torch::zeros({1, 4, 3, 3}), torch::zeros({1, 2, 4, 4})), ConfigError);
    }
}

TEST_CASE("token refinement")
{
    torch::NoGradGuard guard;
    torch::manual_seed(7);
    auto tiny = ScaleProfile::desk();
    tiny.prompt_token_count = 4;
    SelfPrompt sp(tiny);
    const auto emb = torch::randn({1, 64, 16, 16});
    const auto tokens = torch::randn({1, 4, 64});
    const auto out = sp->refine(tokens, emb);
    CHECK(shape(out) == shape(tokens));
    CHECK(torch::equal(out, sp->refine(tokens, emb)));
    CHECK(torch::isfinite(out).all().item<bool>());

    const auto perm = torch::tensor({2, 0, 3, 1}, torch::kLong);
    const auto permuted = sp->refine(tokens.index_select(1, perm), emb);
    CHECK(max_abs_diff(permuted, out.index_select(1, perm)) < 1e-5);

    SUBCASE("decoder layer is a flag")
    {
        SelfPrompt plain(tiny, false);
        const auto direct = SelfPromptImpl::tokenize(emb, plain->spatial_attention(emb));
        CHECK(torch::equal(plain(emb), direct));
        SelfPrompt vanilla(tiny, true, TokenSource::VanillaEmbedding);
        CHECK(shape(vanilla(emb)) == std::vector<int64_t>{1, 4, 64});
    }
}

TEST_CASE("S-Decoder mask construction")
{
    torch::NoGradGuard guard;
    torch::manual_seed(8);
    HiSam model(ScaleProfile::desk());
    const auto emb = model->embed(torch::randn({1, 3, 256, 256}));
    auto& s = model->s_decoder;
    const auto out = model->segment_text(emb);

    SUBCASE("LR and HR logits equal the loop dot product")
    {
        const auto vec = s->hypernet(out.updated_token);
        CHECK(max_abs_diff(out.m_lr, dot_loop(vec, out.features_lr)) < 1e-5);
        const auto feats_hr = s->upsample_mask_features(out.features_lr);
        const auto vec_hr = s->hr_hypernet(out.updated_token);
        CHECK(max_abs_diff(out.m_hr, dot_loop(vec_hr, feats_hr)) < 1e-5);
        CHECK(max_abs_diff(pointwise_product(vec, out.features_lr), dot_loop(vec, out.features_lr)) < 1e-5);
    }
    SUBCASE("HR branch is additive")
    {
        s->use_hr = false;
        const auto lr_only = model->segment_text(emb);
        s->use_hr = true;
        CHECK(!lr_only.m_hr.defined());
        CHECK(torch::equal(lr_only.m_lr, out.m_lr));
        CHECK(torch::equal(lr_only.iou_pred, out.iou_pred));
    }
    SUBCASE("zero hypernetwork output gives zero logits")
    {
        auto last = s->hypernet->layers[2]->as<torch::nn::Linear>();
        last->weight.zero_();
        last->bias.zero_();
        CHECK(model->segment_text(emb).m_lr.abs().max().item<float>() == 0.f);
    }
    SUBCASE("zero features with zero biases give zero HR logits")
    {
        s->hr_up1->bias.zero_();
        s->hr_up2->bias.zero_();
        s->hr_up_norm->bias.zero_();
        for (auto& m : *s->hr_refine)
            m->as<torch::nn::Conv2d>()->bias.zero_();
        const auto [feats, logits] = s->hr_logits(torch::zeros({1, 8, 64, 64}), out.updated_token);
        CHECK(shape(feats) == std::vector<int64_t>{1, 4, 256, 256});
        CHECK(logits.abs().max().item<float>() == 0.f);
    }
    SUBCASE("IoU prediction stays in the unit interval")
    {
        for (double scale : {1.0, 100.0, -1000.0}) {
            const auto iou = s(emb * scale, model->prompt_encoder->dense_pe(), torch::randn({1, 12, 64}) * scale).iou_pred;
            CHECK(iou.min().item<float>() >= 0.f);
            CHECK(iou.max().item<float>() <= 1.f);
        }
    }
}

TEST_CASE("binarization")
{
    CHECK(binarize(torch::full({1, 4, 4}, 10.f), 16).all().item<bool>());
    CHECK(!binarize(torch::full({1, 4, 4}, -10.f), 16).any().item<bool>());

    // 2x2 -> 4x4 half-pixel bilinear: source weights 0, 1/4, 3/4, 1 per axis
    const auto logits = torch::tensor({{-1.f, 2.f}, {2.f, -4.f}});
    const float expect[4][4] = {{-1.f, -0.25f, 1.25f, 2.f},
                                {-0.25f, -0.0625f, 0.3125f, 0.5f},
                                {1.25f, 0.3125f, -1.5625f, -2.5f},
                                {2.f, 0.5f, -2.5f, -4.f}};
    const auto up = resize_logits(logits, 4);
    const auto mask = binarize(logits, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(up[y][x].item<float>() == doctest::Approx(expect[y][x]).epsilon(1e-6));
            CHECK(mask[y][x].item<bool>() == (expect[y][x] > 0));
        }
}

TEST_CASE("HR branch cost is small at full scale")
{
    const auto large = count_text_flops(ScaleProfile::full_large());
    CHECK(large.s_decoder_hr > 0);
    CHECK(large.s_decoder_hr / large.total() < 0.01);
    CHECK(large.s_decoder_hr / 1e9 == doctest::Approx(11.2).epsilon(0.15));

    // a smaller encoder makes the same head relatively dearer
    const auto base = count_text_flops(ScaleProfile::full());
    CHECK(base.s_decoder_hr == large.s_decoder_hr);
    CHECK(base.s_decoder_hr / base.total() < 0.025);
}

TEST_CASE("H-Decoder outputs")
{
    torch::NoGradGuard guard;
    torch::manual_seed(9);
    HiSam model(ScaleProfile::desk());
    const auto emb = model->embed(torch::randn({1, 3, 256, 256}));

    const auto none = model->decode_points(emb, torch::zeros({0, 2}));
    CHECK(none.size() == 0);
    CHECK(split_predictions(none).empty());

    const auto twin = model->decode_points(emb, torch::tensor({{77.f, 33.f}, {77.f, 33.f}}));
    const auto rows = split_predictions(twin);
    REQUIRE(rows.size() == 2);
    CHECK(torch::equal(rows[0].line, rows[1].line));
    CHECK(torch::equal(rows[0].para, rows[1].para));
    CHECK(torch::equal(rows[0].word_kernel_hr, rows[1].word_kernel_hr));
    CHECK(rows[0].iou_line == rows[1].iou_line);

    const auto out = model->decode_points(emb, torch::tensor({{10.f, 200.f}, {128.f, 64.f}}));
    auto& h = model->h_decoder;
    for (int head = 0; head < 3; ++head) {
        const auto vec = h->hypernets[head + 1]->as<MLP>()->forward(out.tokens.index({Slice(), head}));
        const auto& got = head == 0 ? out.word_lr : head == 1 ? out.line : out.para;
        CHECK(max_abs_diff(got, dot_loop(vec, out.features_lr)) < 1e-5);
    }
    CHECK(out.iou.min().item<float>() >= 0.f);
    CHECK(out.iou.max().item<float>() <= 1.f);
}

TEST_CASE("head order survives save and load")
{
    torch::NoGradGuard guard;
    torch::manual_seed(10);
    HiSam model(ScaleProfile::desk());
    // distinct constant output per head
    for (int i = 0; i < 4; ++i) {
        auto last = model->h_decoder->hypernets[i]->as<MLP>()->layers[2]->as<torch::nn::Linear>();
        last->weight.zero_();
        last->bias.fill_(float(i + 1));
    }
    const auto emb = model->embed(torch::randn({1, 3, 256, 256}));
    const auto pts = torch::tensor({{50.f, 60.f}});
    const auto before = model->decode_points(emb, pts);
    CHECK(!torch::allclose(before.word_lr, before.line));
    CHECK(!torch::allclose(before.line, before.para));

    const auto path = temp_file("order.ckpt");
    save_model(path, *model);
    auto loaded = load_model(path);
    std::filesystem::remove(path);
    const auto after = loaded->decode_points(emb, pts);
    CHECK(torch::equal(before.word_lr, after.word_lr));
    CHECK(torch::equal(before.line, after.line));
    CHECK(torch::equal(before.para, after.para));
    CHECK(torch::equal(before.word_hr, after.word_hr));
    CHECK(torch::equal(before.iou, after.iou));

    // bias-only hypernetworks: each head is its constant times the channel sum
    const auto f = after.features_lr.sum(1);
    CHECK(max_abs_diff(after.line, f * 3) < 1e-3);
    CHECK(max_abs_diff(after.para, f * 4) < 1e-3);
}

TEST_CASE("checkpoint archive")
{
    torch::NoGradGuard guard;
    HiSam model(ScaleProfile::desk());
    const auto path = temp_file("archive.ckpt");
    save_model(path, *model, 42);
    const auto ar = read_archive(path);
    CHECK(ar.manifest.at("step") == 42);
    CHECK(ar.tensors.size() == model_state(*model).size());
    auto loaded = model_from_archive(ar);
    for (const auto& [name, t] : model_state(*model))
        CHECK(torch::equal(t, ar.tensors.at(name)));
    CHECK(loaded->profile == model->profile);

    // truncation
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(read_archive(path), DataError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_archive(path), DataError);

    HiSam other(ScaleProfile::desk(), ModelOptions{true, TokenSource::VanillaEmbedding, true});
    CHECK_THROWS_AS(load_model_state(*other, ar), ConfigError);
}
