#include <random>

#include "cseg/checkpoint.hpp"
#include "cseg/error.hpp"
#include "cseg/unet.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cseg;

namespace {

template <typename T>
BasicTensor<T> run_block(const SEBlock<T>& se, const BasicTensor<T>& x) {
    ag::Tape<T> t(false);
    return t.value(se.forward(t, t.constant(x)));
}

template <typename T>
BasicTensor<T> run_block(const ConvBlock<T>& b, const BasicTensor<T>& x, Mode mode = Mode::eval) {
    ag::Tape<T> t(false);
    return t.value(b.forward(t, t.constant(x), mode));
}

template <typename T>
void randomize(BasicTensor<T>& t, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 0.5);
    for (auto& v : t.values()) v = static_cast<T>(d(rng));
}

// Wraps a block's scalar output <f(x), r> into a numeric-gradient friendly function of x.
double block_objective(const ConvBlock<double>& b, const TensorD& x, const TensorD& r) {
    return oracle::dot(run_block(b, x, Mode::train), r);
}

}  // namespace

TEST_CASE("SE block with zero parameters halves the input") {
    SEBlock<float> se(8, 4);
    std::mt19937_64 rng(1);
    auto x = oracle::random_tensor<float>(Shape{2, 8, 4, 4}, rng);
    auto y = run_block(se, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == 0.5f * x[i]);
}

TEST_CASE("SE block maps zero to zero and never grows magnitudes") {
    SEBlock<double> se(8, 4);
    std::mt19937_64 rng(2);
    for (auto* t : {&se.fc1.weight, &se.fc1.bias, &se.fc2.weight, &se.fc2.bias}) randomize(*t, rng);
    auto z = run_block(se, TensorD(Shape{1, 8, 3, 3}));
    for (double v : z.values()) CHECK(v == 0.0);
    auto x = oracle::random_tensor<double>(Shape{2, 8, 4, 4}, rng, -5, 5);
    auto y = run_block(se, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
}

TEST_CASE("SE block matches a composition of the primitive ops") {
    SEBlock<double> se(8, 4);
    CHECK(se.reduced == 2);
    std::mt19937_64 rng(3);
    for (auto* t : {&se.fc1.weight, &se.fc1.bias, &se.fc2.weight, &se.fc2.bias}) randomize(*t, rng);
    auto x = oracle::random_tensor<double>(Shape{2, 8, 4, 4}, rng);
    auto y = run_block(se, x);

    for (std::size_t b = 0; b < 2; ++b) {
        double z[8], h[2], s[8];
        for (std::size_t c = 0; c < 8; ++c) {
            z[c] = 0;
            for (std::size_t i = 0; i < 16; ++i) z[c] += x[(b * 8 + c) * 16 + i] / 16.0;
        }
        for (std::size_t k = 0; k < 2; ++k) {
            h[k] = se.fc1.bias[k];
            for (std::size_t c = 0; c < 8; ++c) h[k] += se.fc1.weight[k * 8 + c] * z[c];
            h[k] = std::max(h[k], 0.0);
        }
        for (std::size_t c = 0; c < 8; ++c) {
            double a = se.fc2.bias[c];
            for (std::size_t k = 0; k < 2; ++k) a += se.fc2.weight[c * 2 + k] * h[k];
            s[c] = 1.0 / (1.0 + std::exp(-a));
        }
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t i = 0; i < 16; ++i) {
                const std::size_t k = (b * 8 + c) * 16 + i;
                CHECK(std::abs(y[k] - x[k] * s[c]) <= 1e-6);
            }
    }
}

TEST_CASE("SE reduced width is clamped to one") {
    CHECK(SEBlock<float>(16, 16).reduced == 1);
    CHECK(SEBlock<float>(8, 16).reduced == 1);
    CHECK(SEBlock<float>(64, 16).reduced == 4);
}

TEST_CASE("conv block") {
    SUBCASE("zero input with zero biases gives zero output") {
        ConvBlock<float> b(2, 4, true, false);
        init_parameters<float>(b, 5);
        auto y = run_block(b, Tensor(Shape{1, 2, 4, 4}));
        CHECK(y.shape() == Shape{1, 4, 4, 4});
        for (float v : y.values()) CHECK(v == 0.0f);
    }
    SUBCASE("residual block with a zeroed conv path is ReLU of the input") {
        ConvBlock<double> b(3, 3, false, true);
        std::mt19937_64 rng(6);
        auto x = oracle::random_tensor<double>(Shape{2, 3, 4, 4}, rng);
        auto y = run_block(b, x);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::max(x[i], 0.0));
        CHECK_FALSE(b.projection.has_value());
        CHECK(ConvBlock<double>(2, 3, false, true).projection.has_value());
    }
    SUBCASE("gradient matches central differences") {
        for (bool residual : {false, true}) {
            ConvBlock<double> b(2, 3, true, residual);
            init_parameters<double>(b, 7);
            std::mt19937_64 rng(8);
            auto x = oracle::random_tensor<double>(Shape{1, 2, 4, 4}, rng);
            auto r = oracle::random_tensor<double>(Shape{1, 3, 4, 4}, rng);
            ag::Tape<double> t;
            auto xi = t.input(x);
            t.backward(ag::project(t, b.forward(t, xi, Mode::train), r));
            auto numeric = oracle::numeric_grad([&](const TensorD& v) { return block_objective(b, v, r); }, x);
            CHECK(oracle::max_rel_error(t.grad(xi), numeric, 1e-5) <= 1e-3);
        }
    }
    CHECK_THROWS_AS(run_block(ConvBlock<float>(2, 4, true, false), Tensor(Shape{1, 3, 4, 4})), ShapeError);
}

TEST_CASE("initialization") {
    ConvBlock<float> a(4, 8, true, false), b(4, 8, true, false), c(4, 8, true, false);
    init_parameters<float>(a, 42);
    init_parameters<float>(b, 42);
    init_parameters<float>(c, 43);
    CHECK(a.conv1.weight.identical(b.conv1.weight));
    CHECK(a.conv2.weight.identical(b.conv2.weight));
    CHECK_FALSE(a.conv1.weight.identical(c.conv1.weight));
    for (float v : a.conv1.bias.values()) CHECK(v == 0.0f);
    for (float v : a.norm1->gamma.values()) CHECK(v == 1.0f);

    Conv2d<double> big(64, 16, 1);  // 1024 weights, fan-in 64
    init_parameters<double>(big, 9);
    double m = 0, v = 0;
    for (double w : big.weight.values()) m += w / 1024;
    for (double w : big.weight.values()) v += (w - m) * (w - m) / 1023;
    const double expected = std::sqrt(2.0 / 64.0);
    CHECK(std::abs(std::sqrt(v) - expected) <= 0.1 * expected);
}

TEST_CASE("architecture names") {
    const auto& names = results_table_names();
    REQUIRE(names.size() == 10);
    const std::vector<std::tuple<int, int, int, bool>> expected = {
        {96, 4, 2048, false}, {96, 4, 1024, false}, {96, 4, 512, false}, {96, 4, 256, false}, {192, 5, 1024, false},
        {96, 5, 1024, false}, {48, 4, 1024, false}, {96, 4, 1024, true}, {96, 4, 512, true},  {96, 4, 256, true}};
    for (std::size_t i = 0; i < 10; ++i) {
        auto c = parse_config_name(names[i]);
        CHECK(std::tuple{c.input_size, c.depth, c.max_filters, c.use_se} == expected[i]);
        CHECK(c.name() == names[i]);
    }
    auto c = parse_config_name("Unet96X2048X4");
    CHECK((c.input_size == 96 && c.max_filters == 2048 && c.depth == 4 && !c.use_se));
    CHECK(parse_config_name("Unet96X1024X4-SE").use_se);
    CHECK(parse_config_name("Unet16X16X2").base_filters() == 4);

    for (const char* bad : {"Unet50X1024X4", "Unet96X1000X4", "Unet96X1024X4-se", "Unet96X1024X4-SE-SE", "unet96X1024X4",
                            "Unet96X1024", "Unet96x1024x4", "Unet96X1024X4SE", "Unet0X16X1", "Unet96X1024X0",
                            "Unet96X1024X4 ", "Unet-96X1024X4", "Unet96X2048X4-RES", ""}) {
        CAPTURE(bad);
        CHECK_THROWS_AS(parse_config_name(bad), ConfigError);
    }
}

TEST_CASE("config text round trip") {
    auto c = parse_config_name("Unet96X512X4-SE");
    c.use_residual = true;
    c.in_channels = 5;
    CHECK(parse_config_text(c.to_text()) == c);
    CHECK_THROWS(parse_config_text("input_size=96\nbogus=1\n"));
    CHECK_THROWS(parse_config_text(c.to_text() + "bogus=1\n"));
}

TEST_CASE("stage widths") {
    Model m(parse_config_name("Unet96X1024X4"), 0);
    CHECK(m.encoder_widths() == std::vector<std::size_t>{64, 128, 256, 512});
    CHECK(m.bottleneck_width() == 1024);
    Model m5(parse_config_name("Unet96X1024X5"), 0);
    CHECK(m5.encoder_widths() == std::vector<std::size_t>{32, 64, 128, 256, 512});
    CHECK(m5.bottleneck_width() == 1024);
}

TEST_CASE("parameter counts") {
    // Per-layer tally for Unet96X256X4: F0 = 16, three input channels, batchnorm on.
    auto conv = [](std::size_t i, std::size_t o, std::size_t k) { return k * k * i * o + o; };
    auto block = [&](std::size_t i, std::size_t o) { return conv(i, o, 3) + 2 * o + conv(o, o, 3) + 2 * o; };
    auto up = [](std::size_t i, std::size_t o) { return i * o * 4 + o; };
    const std::size_t tally = block(3, 16) + block(16, 32) + block(32, 64) + block(64, 128) + block(128, 256) +
                              up(256, 128) + block(256, 128) + up(128, 64) + block(128, 64) + up(64, 32) +
                              block(64, 32) + up(32, 16) + block(32, 16) + conv(16, 1, 1);
    CHECK(tally == 1944049);
    CHECK(Model(parse_config_name("Unet96X256X4"), 0).param_count() == tally);

    std::size_t prev = 0;
    for (int mf : {256, 512, 1024, 2048}) {
        UNetConfig c = parse_config_name("Unet96X" + std::to_string(mf) + "X4");
        UNetConfig small = c;
        small.input_size = 48;
        const std::size_t n = Model(c, 0).param_count();
        CHECK(n > prev);
        CHECK(Model(small, 0).param_count() == n);
        prev = n;
    }

    // SE adds two dense layers at each of the five sites.
    Model plain(parse_config_name("Unet96X256X4"), 0), se(parse_config_name("Unet96X256X4-SE"), 0);
    CHECK(se.se_sites() == 5);
    std::size_t dense = 0;
    for (std::size_t ch : {16, 32, 64, 128, 256}) {
        const std::size_t r = std::max<std::size_t>(ch / 16, 1);
        dense += (ch * r + r) + (r * ch + ch);
    }
    CHECK(dense == 11439);
    CHECK(se.param_count() - plain.param_count() == dense);
}

TEST_CASE("forward pass") {
    Model m(parse_config_name("Unet96X256X4"), 3);
    std::mt19937_64 rng(4);
    auto x = oracle::random_tensor<float>(Shape{2, 3, 96, 96}, rng);
    auto y = m.predict(x);
    REQUIRE(y.shape() == Shape{2, 1, 96, 96});
    for (float v : y.values()) CHECK((v > 0.0f && v < 1.0f));
    CHECK(m.predict(x).identical(y));
    CHECK_THROWS_AS(m.predict(Tensor(Shape{1, 3, 48, 48})), ShapeError);
    CHECK_THROWS_AS(m.predict(Tensor(Shape{1, 4, 96, 96})), ShapeError);
}

TEST_CASE("every table architecture builds and runs") {
    std::mt19937_64 rng(5);
    for (const auto& name : results_table_names()) {
        CAPTURE(name);
        auto c = parse_config_name(name);
        if (c.max_filters > 1024) continue;  // the 2048 model is covered by the benchmark smoke run
        Model m(c, 0);
        auto y = m.predict(oracle::random_tensor<float>(Shape{1, 3, std::size_t(c.input_size), std::size_t(c.input_size)}, rng));
        CHECK(y.shape() == Shape{1, 1, std::size_t(c.input_size), std::size_t(c.input_size)});
    }
}

TEST_CASE("features are shift covariant away from the borders") {
    UNetConfig c = parse_config_name("Unet16X16X1");
    c.input_size = 40;
    c.batchnorm = false;
    UNet<double> m(c, 7);
    // Nonzero biases make the check sensitive to padding leaks.
    std::mt19937_64 rng(8);
    for (auto& p : m.parameters())
        if (p.kind == ParamKind::bias) randomize(*p.tensor, rng);
    auto x = oracle::random_tensor<double>(Shape{1, 3, 40, 40}, rng);
    TensorD shifted(x.shape());
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < 40; ++i)
            for (std::size_t j = 0; j < 40; ++j) shifted.at(0, ch, (i + 2) % 40, (j + 2) % 40) = x.at(0, ch, i, j);
    auto feats = [&](const TensorD& in) {
        ag::Tape<double> t(false);
        return t.value(m.features(t, t.constant(in), Mode::eval));
    };
    auto a = feats(x), b = feats(shifted);
    double worst = 0;
    for (std::size_t ch = 0; ch < a.dim(1); ++ch)
        for (std::size_t i = 12; i < 26; ++i)
            for (std::size_t j = 12; j < 26; ++j) worst = std::max(worst, std::abs(a.at(0, ch, i, j) - b.at(0, ch, i + 2, j + 2)));
    CHECK(worst <= 1e-9);
}

TEST_CASE("checkpoint round trip") {
    auto dir = oracle::temp_dir("checkpoint");
    Model m(parse_config_name("Unet16X32X2-SE"), 11);
    // Move the running statistics off their initial values so they are part of the round trip.
    std::mt19937_64 rng(12);
    auto x = oracle::random_tensor<float>(Shape{2, 3, 16, 16}, rng);
    {
        ag::Tape<float> t(false);
        m.forward(t, t.constant(x), Mode::train);
    }
    NormalizationStats norm{{255, 255, 255}, {0.4f, 0.5f, 0.6f}, {0.1f, 0.2f, 0.3f}};
    TrainerState ts{3, 0.5, 2, 1, false};
    save_checkpoint(dir / "m.ckpt", m, {}, ts, "rng", norm);
    auto ck = load_checkpoint(dir / "m.ckpt");
    CHECK(ck.model.config() == m.config());
    CHECK(ck.model.predict(x).identical(m.predict(x)));
    CHECK(ck.trainer == ts);
    CHECK(ck.rng_state == "rng");
    CHECK(ck.normalization == norm);

    const auto bytes = oracle::read_file(dir / "m.ckpt");
    for (std::size_t cut : {std::size_t(4), std::size_t(40), bytes.size() / 2, bytes.size() - 1}) {
        std::FILE* f = std::fopen((dir / "cut.ckpt").string().c_str(), "wb");
        std::fwrite(bytes.data(), 1, cut, f);
        std::fclose(f);
        CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), FormatError);
    }
    std::string bad = bytes;
    bad[8] = 99;  // version field
    {
        std::FILE* f = std::fopen((dir / "ver.ckpt").string().c_str(), "wb");
        std::fwrite(bad.data(), 1, bad.size(), f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "ver.ckpt"), FormatError);
    CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}
