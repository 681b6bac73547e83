#include <algorithm>
#include <random>

#include "cseg/config.hpp"
#include "cseg/error.hpp"
#include "cseg/metrics.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cseg;

namespace {

Tensor mask_from(std::size_t n, std::initializer_list<std::size_t> on) {
    Tensor t(Shape{1, 1, 1, n});
    for (auto i : on) t[i] = 1.0f;
    return t;
}

}  // namespace

TEST_CASE("soft dice examples") {
    std::mt19937_64 rng(1);
    auto t = oracle::random_mask<float>(Shape{2, 1, 8, 8}, rng);
    CHECK(soft_dice(t, t, 0.0) == doctest::Approx(1.0));
    CHECK(soft_dice(t, t, 1e-9) == doctest::Approx(1.0));

    auto p4 = mask_from(16, {0, 1, 2, 3});
    auto t4 = mask_from(16, {8, 9, 10, 11});
    CHECK(soft_dice(p4, t4, 1.0) == doctest::Approx(1.0 / 9.0).epsilon(1e-12));

    auto p2 = mask_from(16, {0, 1});
    auto t2 = mask_from(16, {0, 1, 2, 3});
    CHECK(soft_dice(p2, t2, 0.0) == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("soft dice rejects bad input") {
    Tensor p(Shape{1, 1, 2, 2}, 0.5f), t(Shape{1, 1, 2, 2}, 1.0f);
    CHECK_THROWS_AS(soft_dice(p, Tensor(Shape{1, 1, 2, 3}), 1.0), ShapeError);
    Tensor bad = p;
    bad[1] = 1.5f;
    CHECK_THROWS(soft_dice(bad, t, 1.0));
    bad[1] = -0.1f;
    CHECK_THROWS(soft_dice(bad, t, 1.0));
    CHECK_THROWS(soft_dice(p, t, -1.0));
    // Two empty masks agree perfectly, even without smoothing.
    CHECK(soft_dice(Tensor(Shape{1, 1, 2, 2}), Tensor(Shape{1, 1, 2, 2}), 0.0) == 1.0);
}

TEST_CASE("soft dice equals the set formula on binary masks") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> side(1, 32);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    int checked = 0;
    while (checked < 300) {
        const std::size_t h = side(rng), w = side(rng);
        auto a = oracle::random_mask<float>(Shape{1, 1, h, w}, rng, density(rng));
        auto b = oracle::random_mask<float>(Shape{1, 1, h, w}, rng, density(rng));
        std::size_t inter = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            na += a[i] > 0;
            nb += b[i] > 0;
            inter += a[i] > 0 && b[i] > 0;
        }
        if (na + nb == 0) continue;
        CHECK(std::abs(soft_dice(a, b, 0.0) - 2.0 * inter / double(na + nb)) <= 1e-6);
        CHECK(soft_dice(a, b, 0.0) == soft_dice(b, a, 0.0));
        ++checked;
    }
}

TEST_CASE("soft dice stays in [0,1] and is monotone in the prediction") {
    std::mt19937_64 rng(3);
    auto p = oracle::random_tensor<double>(Shape{1, 1, 6, 6}, rng, 0.0, 0.9);
    auto t = oracle::random_mask<double>(Shape{1, 1, 6, 6}, rng);
    const double base = soft_dice(p, t, 1.0);
    CHECK((base >= 0.0 && base <= 1.0));
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto q = p;
        q[i] += 0.05;
        const double d = soft_dice(q, t, 1.0);
        if (t[i] > 0) {
            CHECK(d >= base);
        } else {
            CHECK(d <= base);
        }
    }
}

TEST_CASE("soft dice reduces jointly over the batch") {
    // Sample 0: perfect on 1 pixel. Sample 1: 3 target pixels, nothing predicted.
    TensorD p(Shape{2, 1, 1, 4}), t(Shape{2, 1, 1, 4});
    p[0] = t[0] = 1;
    t[4] = t[5] = t[6] = 1;
    CHECK(soft_dice(p, t, 0.0) == doctest::Approx(2.0 / 5.0));
}

TEST_CASE("dice loss") {
    std::mt19937_64 rng(4);
    auto t = oracle::random_mask<double>(Shape{1, 1, 8, 8}, rng);
    CHECK(dice_loss(t, t, 1.0) <= 1e-12);

    auto p = oracle::random_tensor<double>(Shape{1, 1, 8, 8}, rng, 0.05, 0.95);
    for (double eps : {1.0, 0.0}) {
        auto g = dice_loss_grad(p, t, eps);
        auto n = oracle::numeric_grad([&](const TensorD& v) { return dice_loss(v, t, eps); }, p);
        CHECK(oracle::max_rel_error(g, n) <= 1e-5);
    }

    std::vector<std::size_t> perm(p.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    TensorD pp(p.shape()), tp(t.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) pp[i] = p[perm[i]], tp[i] = t[perm[i]];
    CHECK(dice_loss(pp, tp, 1.0) == doctest::Approx(dice_loss(p, t, 1.0)).epsilon(1e-12));
}

TEST_CASE("bce loss gradient") {
    std::mt19937_64 rng(5);
    auto p = oracle::random_tensor<double>(Shape{1, 1, 4, 4}, rng, 0.05, 0.95);
    auto t = oracle::random_mask<double>(Shape{1, 1, 4, 4}, rng);
    auto n = oracle::numeric_grad([&](const TensorD& v) { return bce_loss(v, t); }, p);
    CHECK(oracle::max_rel_error(bce_loss_grad(p, t), n) <= 1e-5);
}

TEST_CASE("binarize") {
    auto b = binarize(Tensor(Shape{1}, 0.5f), 0.5);
    CHECK(b[0] == 1.0f);
    auto z = binarize(Tensor(Shape{3, 3}), 0.5);
    for (float v : z.values()) CHECK(v == 0.0f);
    std::mt19937_64 rng(6);
    auto x = oracle::random_tensor<float>(Shape{4, 4}, rng, 0.0, 1.0);
    CHECK(binarize(binarize(x, 0.3), 0.3).identical(binarize(x, 0.3)));
    CHECK_THROWS(binarize(x, 0.0));
    CHECK_THROWS(binarize(x, 1.0));
}

TEST_CASE("pixel accuracy") {
    std::mt19937_64 rng(7);
    auto a = oracle::random_mask<float>(Shape{2, 1, 9, 7}, rng);
    CHECK(pixel_accuracy(a, a) == 1.0);
    Tensor comp(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) comp[i] = 1.0f - a[i];
    CHECK(pixel_accuracy(a, comp) == 0.0);
    auto b = oracle::random_mask<float>(a.shape(), rng);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
    CHECK(pixel_accuracy(a, b) == doctest::Approx(double(agree) / double(a.size())));
    CHECK_THROWS_AS(pixel_accuracy(a, Tensor(Shape{1})), ShapeError);
}

TEST_CASE("metric report") {
    std::mt19937_64 rng(8);
    auto t = oracle::random_mask<float>(Shape{2, 1, 6, 6}, rng);
    auto perfect = compute_report(t, t);
    CHECK(perfect.soft_dice == doctest::Approx(1.0));
    CHECK(perfect.pixel_accuracy == 1.0);

    // Constant 0.5 binarizes to all ones.
    auto r = compute_report(Tensor(t.shape(), 0.5f), t, 0.0, 0.5);
    double nt = 0;
    for (float v : t.values()) nt += v;
    CHECK(r.hard_dice == doctest::Approx(2 * nt / (nt + double(t.size()))));
    CHECK(r.pixel_accuracy == doctest::Approx(nt / double(t.size())));

    auto line = format_metric_record("x", parse_config_name("Unet96X256X4-SE"), perfect);
    CHECK(metric_record_header() == "name,IS,N,MF,soft_dice,hard_dice,pixel_acc");
    CHECK(line.rfind("x,96,4,256,", 0) == 0);
}
