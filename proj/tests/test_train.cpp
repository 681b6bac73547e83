#include <cmath>
#include <random>

#include "cseg/error.hpp"
#include "cseg/parallel.hpp"
#include "cseg/synth.hpp"
#include "cseg/train.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cseg;

namespace {

struct Scalar {
    Tensor w;
    std::vector<ParamRef<float>> refs;
    explicit Scalar(const std::vector<float>& v) : w(Shape{v.size()}, v) { refs.push_back({"w", &w, ParamKind::weight, 1}); }
    void set_grad(std::vector<float> g) {
        auto dst = w.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] = g[i];
    }
};

std::vector<Sample> tiny_samples(std::size_t scenes, std::uint64_t seed) {
    auto sc = synth_dataset(scenes, 32, seed);
    auto samples = tile_scenes(sc, 16, 16);
    normalize_samples(samples, fit_normalization(std::span<const Sample>(samples)));
    return samples;
}

TrainConfig tiny_config(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 4;
    c.seed = 5;
    c.patience = 0;
    return c;
}

bool same_parameters(Model& a, Model& b) {
    auto pa = a.state(), pb = b.state();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!pa[i].tensor->identical(*pb[i].tensor)) return false;
    return true;
}

struct ReferenceMode {
    ReferenceMode() { set_reference_mode(true); }
    ~ReferenceMode() { set_reference_mode(false); }
};

}  // namespace

TEST_CASE("adam") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    SUBCASE("zero gradients leave parameters unchanged") {
        Scalar s({1.0f, -2.0f});
        OptimizerState<float> st;
        s.set_grad({0, 0});
        adam_step<float>(s.refs, st, cfg);
        CHECK(s.w[0] == 1.0f);
        CHECK(s.w[1] == -2.0f);
    }
    SUBCASE("first step moves each weight by about lr against the gradient") {
        Scalar s({1.0f, 1.0f});
        OptimizerState<float> st;
        s.set_grad({3.0f, -0.01f});
        adam_step<float>(s.refs, st, cfg);
        CHECK(s.w[0] == doctest::Approx(1.0 - 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-6));
        CHECK(s.w[1] == doctest::Approx(1.0 + 0.1 * 0.01 / (0.01 + 1e-8)).epsilon(1e-6));
        CHECK(st.step == 1);
    }
    SUBCASE("descends w^2 monotonically") {
        Scalar s({1.0f});
        OptimizerState<float> st;
        double prev = 1.0;
        for (int k = 0; k < 10; ++k) {
            s.set_grad({2.0f * s.w[0]});
            adam_step<float>(s.refs, st, cfg);
            CHECK(std::abs(s.w[0]) < prev);
            prev = std::abs(s.w[0]);
        }
    }
    SUBCASE("non-finite gradients are refused without touching parameters") {
        Scalar s({1.0f, 2.0f});
        OptimizerState<float> st;
        s.set_grad({1.0f, NAN});
        CHECK_THROWS_AS(adam_step<float>(s.refs, st, cfg), NumericError);
        CHECK(s.w[0] == 1.0f);
    }
}

TEST_CASE("sgd") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    Scalar s({1.0f, -3.0f});
    OptimizerState<float> st;
    st.kind = OptimizerKind::sgd;
    s.set_grad({0.5f, 2.0f});
    sgd_step<float>(s.refs, st, cfg);
    CHECK(s.w[0] == doctest::Approx(0.95));
    CHECK(s.w[1] == doctest::Approx(-3.2));

    Scalar z({4.0f});
    OptimizerState<float> zs;
    z.set_grad({0.0f});
    cfg.momentum = 0.9;
    sgd_step<float>(z.refs, zs, cfg);
    CHECK(z.w[0] == 4.0f);

    // ||w||^2 bowl, gradient 2w, lr below 1.
    cfg.momentum = 0.0;
    Scalar b({3.0f, -4.0f});
    OptimizerState<float> bs;
    double prev = 5.0;
    for (int k = 0; k < 20; ++k) {
        b.set_grad({2 * b.w[0], 2 * b.w[1]});
        sgd_step<float>(b.refs, bs, cfg);
        const double n = std::hypot(b.w[0], b.w[1]);
        CHECK(n < prev);
        prev = n;
    }
}

TEST_CASE("gradient clipping") {
    Scalar s({0.0f, 0.0f});
    s.set_grad({3.0f, 4.0f});
    CHECK(clip_grad_norm<float>(s.refs, 1.0) == doctest::Approx(5.0));
    CHECK(s.w.grad()[0] == doctest::Approx(0.6));
    CHECK(s.w.grad()[1] == doctest::Approx(0.8));
}

TEST_CASE("training configuration is validated") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.optimizer.learning_rate = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.bce_weight = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero epochs return the model unchanged") {
    auto samples = tiny_samples(2, 1);
    Model m(parse_config_name("Unet16X16X2"), 3);
    auto r = train(m, samples, samples, tiny_config(0));
    CHECK(r.history.records.empty());
    CHECK(same_parameters(r.model, m));
}

TEST_CASE("reference-mode training is bitwise reproducible") {
    ReferenceMode ref;
    auto samples = tiny_samples(3, 2);
    auto [tr, va] = split_by_scene(samples, 0.34, 1);
    auto cfg = tiny_config(3);
    cfg.augmentation = AugmentationSpec{};
    auto a = train(Model(parse_config_name("Unet16X16X2-SE"), 4), tr, va, cfg);
    auto b = train(Model(parse_config_name("Unet16X16X2-SE"), 4), tr, va, cfg);
    REQUIRE(a.history.records.size() == 3);
    CHECK(a.history.records == b.history.records);
    for (const auto& r : a.history.records) CHECK(r.seconds == 0.0);
    CHECK(same_parameters(a.model, b.model));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
    ReferenceMode ref;
    auto dir = oracle::temp_dir("resume");
    auto samples = tiny_samples(3, 3);
    auto [tr, va] = split_by_scene(samples, 0.34, 2);
    auto cfg = tiny_config(4);
    cfg.augmentation = AugmentationSpec{};

    Trainer full(Model(parse_config_name("Unet16X16X2"), 6), cfg);
    auto h_full = full.fit(tr, va);

    auto first_cfg = cfg;
    first_cfg.epochs = 2;
    Trainer first(Model(parse_config_name("Unet16X16X2"), 6), first_cfg);
    auto h1 = first.fit(tr, va);
    first.save(dir / "last.ckpt");
    first.save_best(dir / "best.ckpt");

    auto resumed = Trainer::resume(load_checkpoint(dir / "last.ckpt"), cfg, load_checkpoint(dir / "best.ckpt").model);
    auto h2 = resumed.fit(tr, va);
    REQUIRE(h1.records.size() + h2.records.size() == h_full.records.size());
    for (std::size_t i = 0; i < h1.records.size(); ++i) CHECK(h1.records[i] == h_full.records[i]);
    for (std::size_t i = 0; i < h2.records.size(); ++i) CHECK(h2.records[i] == h_full.records[i + 2]);
    Model a = full.model(), b = resumed.model();
    CHECK(same_parameters(a, b));
    Model ba = full.best_model(), bb = resumed.best_model();
    CHECK(same_parameters(ba, bb));
    CHECK(resumed.state() == full.state());
}

TEST_CASE("the best model is the one with the highest validation dice") {
    ReferenceMode ref;
    auto samples = tiny_samples(3, 4);
    auto [tr, va] = split_by_scene(samples, 0.34, 3);
    auto cfg = tiny_config(5);
    Trainer t(Model(parse_config_name("Unet16X16X2"), 7), cfg);
    auto h = t.fit(tr, va);
    std::size_t best = 0;
    for (std::size_t i = 1; i < h.records.size(); ++i)
        if (h.records[i].val_soft_dice > h.records[best].val_soft_dice) best = i;
    CHECK(t.state().best_epoch == h.records[best].epoch);
    CHECK(evaluate(t.best_model(), va).soft_dice == h.records[best].val_soft_dice);
    CHECK(evaluate(t.model(), va).soft_dice == h.records.back().val_soft_dice);
}

TEST_CASE("early stopping") {
    ReferenceMode ref;
    auto samples = tiny_samples(3, 5);
    auto [tr, va] = split_by_scene(samples, 0.34, 4);
    auto cfg = tiny_config(30);
    cfg.patience = 2;
    Trainer t(Model(parse_config_name("Unet16X16X2"), 8), cfg);
    auto h = t.fit(tr, va);
    // Replay the stopping rule over the recorded history.
    double best = -1;
    std::size_t stale = 0, expected = cfg.epochs;
    for (const auto& r : h.records) {
        if (r.val_soft_dice > best) {
            best = r.val_soft_dice;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            expected = r.epoch;
            break;
        }
    }
    CHECK(h.records.size() == expected);
    CHECK(t.state().stopped == (expected < cfg.epochs));

    auto target = tiny_config(30);
    target.target_dice = 1e-9;
    Trainer q(Model(parse_config_name("Unet16X16X2"), 8), target);
    CHECK(q.fit(tr, va).records.size() == 1);
}

TEST_CASE("non-finite loss aborts with a numeric error") {
    auto samples = tiny_samples(1, 6);
    samples[0].image[5] = NAN;
    Trainer t(Model(parse_config_name("Unet16X16X2"), 9), tiny_config(1));
    CHECK_THROWS_AS(t.fit(samples, {}), NumericError);
}

TEST_CASE("evaluate") {
    auto samples = tiny_samples(2, 7);
    Model m(parse_config_name("Unet16X16X2"), 10);
    auto preds = predict_samples(m, samples, 3);
    REQUIRE(preds.size() == samples.size());
    Tensor all_p(Shape{samples.size(), 1, 16, 16}), all_t(all_p.shape());
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t k = 0; k < 256; ++k) all_p[i * 256 + k] = preds[i][k], all_t[i * 256 + k] = samples[i].mask[k];
    auto oracle_report = compute_report(all_p, all_t, 1.0, 0.5);
    auto r = evaluate(m, samples, 1.0, 0.5, 3);
    CHECK(r.soft_dice == doctest::Approx(oracle_report.soft_dice).epsilon(1e-9));
    CHECK(r.hard_dice == doctest::Approx(oracle_report.hard_dice).epsilon(1e-9));
    CHECK(r.pixel_accuracy == doctest::Approx(oracle_report.pixel_accuracy).epsilon(1e-12));
    CHECK(evaluate(m, samples, 1.0, 0.5, 8).soft_dice == doctest::Approx(r.soft_dice).epsilon(1e-12));
    CHECK_THROWS_AS(evaluate(m, std::span<const Sample>{}), DataError);
}

TEST_CASE("history format") {
    CHECK(history_header() == "epoch,train_loss,val_soft_dice,val_pixel_acc,seconds");
    CHECK(format_history_row({3, 0.5, 0.25, 0.75, 0}) == "3,0.5,0.25,0.75,0.000");
}
