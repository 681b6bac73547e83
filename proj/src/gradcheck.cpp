#include "cseg/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <random>

#include "cseg/unet.hpp"

namespace cseg {

GradcheckScope parse_gradcheck_scope(const std::string& s) {
    if (s == "layer") return GradcheckScope::layer;
    if (s == "block") return GradcheckScope::block;
    if (s == "model") return GradcheckScope::model;
    if (s == "all") return GradcheckScope::all;
    throw ConfigError("unknown gradcheck scope '" + s + "' (expected layer, block, model or all)");
}

bool GradcheckReport::passed() const {
    return std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.passed(); });
}

std::string GradcheckReport::table() const {
    std::string out = "scope,check,group,elements,skipped,max_rel_error,tolerance,status\n";
    char buf[64];
    for (const auto& g : groups) {
        std::snprintf(buf, sizeof buf, ",%.3e,%.0e,", g.max_rel_error, g.tolerance);
        out += g.scope + "," + g.check + "," + g.group + "," + std::to_string(g.elements) + "," + std::to_string(g.skipped) + buf +
               (g.passed() ? "pass" : "FAIL") + "\n";
    }
    return out;
}

namespace {

using ag::Tape;
using ag::Var;

struct Case {
    std::string scope;
    std::string check;
    double tolerance = 0;
    std::vector<std::pair<std::string, TensorD*>> groups;
    std::function<Var(Tape<double>&)> build;
};

class Runner {
public:
    Runner(const GradcheckOptions& o) : opt_(o), rng_(o.seed) {}

    TensorD uniform(Shape s, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        TensorD t(std::move(s));
        for (auto& v : t.values()) v = d(rng_);
        return t;
    }

    // Values bounded away from zero so ReLU-style kinks stay out of reach of the step.
    TensorD away_from_zero(Shape s) {
        TensorD t = uniform(std::move(s), 0.1, 1.0);
        std::bernoulli_distribution sign(0.5);
        for (auto& v : t.values()) v = sign(rng_) ? v : -v;
        return t;
    }

    TensorD binary(Shape s) {
        std::bernoulli_distribution d(0.4);
        TensorD t(std::move(s));
        for (auto& v : t.values()) v = d(rng_) ? 1.0 : 0.0;
        return t;
    }

    // He init plus non-trivial biases and norm affine parameters.
    template <typename Layer>
    void init(Layer& layer) {
        init_parameters<double>(layer, rng_());
        std::uniform_real_distribution<double> small(-0.2, 0.2), around_one(0.6, 1.4);
        for (auto& p : collect_parameters<double>(layer, "", false)) {
            for (auto& v : p.tensor->values()) {
                if (p.kind == ParamKind::bias || p.kind == ParamKind::beta) v = small(rng_);
                if (p.kind == ParamKind::gamma) v = around_one(rng_);
            }
        }
    }

    template <typename Layer>
    void add_layer_groups(Case& c, Layer& layer) {
        for (auto& p : collect_parameters<double>(layer, "", false)) {
            c.groups.emplace_back(p.name.starts_with(".") ? p.name.substr(1) : p.name, p.tensor);
        }
    }

    std::vector<GradGroupResult> run(const Case& c) {
        for (auto& [name, t] : c.groups) t->zero_grad();
        {
            Tape<double> tape(true);
            tape.backward(c.build(tape));
        }
        std::vector<GradGroupResult> out;
        for (auto& [name, t] : c.groups) {
            const TensorD analytic = t->has_grad() ? TensorD(t->shape(), std::vector<double>(t->grad().begin(), t->grad().end()))
                                                   : TensorD(t->shape());
            std::vector<std::size_t> idx(t->size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            if (idx.size() > opt_.max_elements) {
                std::shuffle(idx.begin(), idx.end(), rng_);
                idx.resize(opt_.max_elements);
                std::sort(idx.begin(), idx.end());
            }
            GradGroupResult r{c.scope, c.check, name, idx.size(), 0, 0.0, c.tolerance};
            for (std::size_t i : idx) {
                const double v = (*t)[i];
                std::uint64_t hp = 0, hm = 0;
                (*t)[i] = v + opt_.step;
                const double fp = eval(c, hp);
                (*t)[i] = v - opt_.step;
                const double fm = eval(c, hm);
                (*t)[i] = v;
                if (hp != hm) {
                    ++r.skipped;
                    continue;
                }
                const double numeric = (fp - fm) / (2 * opt_.step);
                const double a = analytic[i];
                const double den = std::max({std::abs(a), std::abs(numeric), opt_.floor});
                r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / den);
            }
            out.push_back(r);
        }
        return out;
    }

    const GradcheckOptions& options() const { return opt_; }
    std::mt19937_64& rng() { return rng_; }

private:
    static double eval(const Case& c, std::uint64_t& trace) {
        trace = 0xcbf29ce484222325ULL;
        ag::decision_trace = &trace;
        Tape<double> tape(false);
        const double f = tape.value(c.build(tape))[0];
        ag::decision_trace = nullptr;
        return f;
    }

    GradcheckOptions opt_;
    std::mt19937_64 rng_;
};

// Storage for the tensors a case refers to; node-stable so pointers stay valid.
struct Store {
    std::vector<std::unique_ptr<TensorD>> tensors;
    TensorD* add(TensorD t) {
        tensors.push_back(std::make_unique<TensorD>(std::move(t)));
        return tensors.back().get();
    }
};

void layer_cases(Runner& R, Store& S, std::vector<GradGroupResult>& out) {
    const double tol = R.options().tolerance_primitive;
    const auto projected = [&](const std::string& check, std::vector<std::pair<std::string, TensorD*>> inputs,
                               Shape out_shape, std::function<Var(Tape<double>&, std::vector<Var>&)> op) {
        TensorD* w = S.add(R.uniform(out_shape, -1.0, 1.0));
        Case c{"layer", check, tol, inputs, nullptr};
        c.build = [inputs, w, op](Tape<double>& t) {
            std::vector<Var> vars;
            for (auto& [n, p] : inputs) vars.push_back(t.parameter(*p));
            return ag::project(t, op(t, vars), *w);
        };
        auto r = R.run(c);
        out.insert(out.end(), r.begin(), r.end());
    };

    {
        TensorD* x = S.add(R.uniform({2, 3, 5, 5}, -1, 1));
        TensorD* w = S.add(R.uniform({4, 3, 3, 3}, -0.5, 0.5));
        TensorD* b = S.add(R.uniform({4}, -0.2, 0.2));
        projected("conv2d_3x3", {{"input", x}, {"weight", w}, {"bias", b}}, {2, 4, 5, 5},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::conv2d(t, v[0], v[1], v[2], 1, 1); });
    }
    {
        TensorD* x = S.add(R.uniform({1, 2, 7, 7}, -1, 1));
        TensorD* w = S.add(R.uniform({3, 2, 3, 3}, -0.5, 0.5));
        TensorD* b = S.add(R.uniform({3}, -0.2, 0.2));
        projected("conv2d_3x3_stride2", {{"input", x}, {"weight", w}, {"bias", b}}, {1, 3, 4, 4},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::conv2d(t, v[0], v[1], v[2], 2, 1); });
    }
    {
        TensorD* x = S.add(R.uniform({2, 3, 4, 4}, -1, 1));
        TensorD* w = S.add(R.uniform({2, 3, 1, 1}, -0.5, 0.5));
        TensorD* b = S.add(R.uniform({2}, -0.2, 0.2));
        projected("conv2d_1x1", {{"input", x}, {"weight", w}, {"bias", b}}, {2, 2, 4, 4},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::conv2d(t, v[0], v[1], v[2], 1, 0); });
    }
    {
        TensorD* x = S.add(R.uniform({2, 2, 4, 6}, -1, 1));
        projected("maxpool2x2", {{"input", x}}, {2, 2, 2, 3},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::maxpool2x2(t, v[0]); });
    }
    {
        TensorD* x = S.add(R.uniform({2, 3, 3, 3}, -1, 1));
        TensorD* w = S.add(R.uniform({3, 2, 2, 2}, -0.5, 0.5));
        TensorD* b = S.add(R.uniform({2}, -0.2, 0.2));
        projected("upconv2x2", {{"input", x}, {"weight", w}, {"bias", b}}, {2, 2, 6, 6},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::upconv2x2(t, v[0], v[1], v[2]); });
    }
    {
        TensorD* x = S.add(R.away_from_zero({2, 3, 4, 4}));
        projected("relu", {{"input", x}}, {2, 3, 4, 4},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::relu(t, v[0]); });
    }
    {
        TensorD* x = S.add(R.uniform({2, 3, 4, 4}, -4, 4));
        projected("sigmoid", {{"input", x}}, {2, 3, 4, 4},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::sigmoid(t, v[0]); });
    }
    {
        TensorD* a = S.add(R.uniform({2, 3, 4, 4}, -1, 1));
        TensorD* b = S.add(R.uniform({2, 3, 4, 4}, -1, 1));
        projected("add", {{"a", a}, {"b", b}}, {2, 3, 4, 4},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::add(t, v[0], v[1]); });
    }
    {
        TensorD* a = S.add(R.uniform({2, 2, 3, 3}, -1, 1));
        TensorD* b = S.add(R.uniform({2, 3, 3, 3}, -1, 1));
        projected("concat_channels", {{"a", a}, {"b", b}}, {2, 5, 3, 3},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::concat_channels(t, v[0], v[1]); });
    }
    {
        TensorD* x = S.add(R.uniform({2, 3, 3, 3}, -1, 1));
        TensorD* s = S.add(R.uniform({2, 3}, 0, 1));
        projected("channelwise_scale", {{"input", x}, {"scale", s}}, {2, 3, 3, 3},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::channelwise_scale(t, v[0], v[1]); });
    }
    {
        TensorD* x = S.add(R.uniform({2, 3, 4, 4}, -1, 1));
        projected("global_avg_pool", {{"input", x}}, {2, 3},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::global_avg_pool(t, v[0]); });
    }
    {
        TensorD* x = S.add(R.uniform({4, 5}, -1, 1));
        TensorD* w = S.add(R.uniform({3, 5}, -0.5, 0.5));
        TensorD* b = S.add(R.uniform({3}, -0.2, 0.2));
        projected("dense", {{"input", x}, {"weight", w}, {"bias", b}}, {4, 3},
                  [](Tape<double>& t, std::vector<Var>& v) { return ag::dense(t, v[0], v[1], v[2]); });
    }
    for (Mode mode : {Mode::train, Mode::eval}) {
        TensorD* x = S.add(R.uniform({2, 3, 4, 4}, -1, 2));
        TensorD* g = S.add(R.uniform({3}, 0.6, 1.4));
        TensorD* b = S.add(R.uniform({3}, -0.2, 0.2));
        auto stats = std::make_shared<RunningStats<double>>(
            RunningStats<double>{R.uniform({3}, -0.3, 0.3), R.uniform({3}, 0.5, 1.5)});
        projected(mode == Mode::train ? "batchnorm2d_train" : "batchnorm2d_eval",
                  {{"input", x}, {"gamma", g}, {"beta", b}}, {2, 3, 4, 4},
                  [stats, mode](Tape<double>& t, std::vector<Var>& v) {
                      // Train mode updates running stats; a scratch copy keeps the fixture unchanged.
                      RunningStats<double> scratch = *stats;
                      return ag::batchnorm2d(t, v[0], v[1], v[2], mode == Mode::train ? &scratch : stats.get(), mode,
                                             BatchNormOptions{});
                  });
    }
    for (double eps : {1.0, 0.0}) {
        TensorD* p = S.add(R.uniform({2, 1, 4, 4}, 0.05, 0.95));
        TensorD target = R.binary({2, 1, 4, 4});
        Case c{"layer", eps > 0 ? "dice_loss" : "dice_loss_eps0", tol, {{"pred", p}}, nullptr};
        c.build = [p, target, eps](Tape<double>& t) { return ag::dice_loss(t, t.parameter(*p), target, eps); };
        auto r = R.run(c);
        out.insert(out.end(), r.begin(), r.end());
    }
    {
        TensorD* p = S.add(R.uniform({2, 1, 4, 4}, 0.05, 0.95));
        TensorD target = R.binary({2, 1, 4, 4});
        Case c{"layer", "bce_loss", tol, {{"pred", p}}, nullptr};
        c.build = [p, target](Tape<double>& t) { return ag::bce_loss(t, t.parameter(*p), target); };
        auto r = R.run(c);
        out.insert(out.end(), r.begin(), r.end());
    }
}

void block_cases(Runner& R, Store& S, std::vector<GradGroupResult>& out) {
    const double tol = R.options().tolerance_primitive;
    struct Spec {
        std::string name;
        std::size_t cin, cout;
        bool norm, residual;
    };
    for (const Spec& spec : {Spec{"conv_block", 2, 3, true, false}, Spec{"conv_block_no_norm", 2, 3, false, false},
                             Spec{"residual_block_projection", 2, 3, true, true},
                             Spec{"residual_block_identity", 3, 3, true, true}}) {
        auto block = std::make_shared<ConvBlock<double>>(spec.cin, spec.cout, spec.norm, spec.residual);
        R.init(*block);
        TensorD* x = S.add(R.uniform({2, spec.cin, 4, 4}, -1, 1));
        TensorD* w = S.add(R.uniform({2, spec.cout, 4, 4}, -1, 1));
        Case c{"block", spec.name, tol, {{"input", x}}, nullptr};
        R.add_layer_groups(c, *block);
        c.build = [block, x, w](Tape<double>& t) {
            return ag::project(t, block->forward(t, t.parameter(*x), Mode::train), *w);
        };
        auto r = R.run(c);
        out.insert(out.end(), r.begin(), r.end());
    }
    {
        auto se = std::make_shared<SEBlock<double>>(8, 4);
        R.init(*se);
        TensorD* x = S.add(R.uniform({2, 8, 4, 4}, -1, 1));
        TensorD* w = S.add(R.uniform({2, 8, 4, 4}, -1, 1));
        Case c{"block", "se_block", tol, {{"input", x}}, nullptr};
        R.add_layer_groups(c, *se);
        c.build = [se, x, w](Tape<double>& t) { return ag::project(t, se->forward(t, t.parameter(*x)), *w); };
        auto r = R.run(c);
        out.insert(out.end(), r.begin(), r.end());
    }
}

void model_cases(Runner& R, Store& S, std::vector<GradGroupResult>& out) {
    const std::string name = "Unet16X16X2";
    auto net = std::make_shared<UNet<double>>(parse_config_name(name), R.rng()());
    R.init(*net);
    TensorD* x = S.add(R.uniform({2, 3, 16, 16}, -1, 1));
    // A blocky target keeps the loss surface representative of real masks.
    TensorD target({2, 1, 16, 16});
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t y = 0; y < 16; ++y) {
            for (std::size_t xx = 0; xx < 16; ++xx) target[(b * 16 + y) * 16 + xx] = (y / 4 + xx / 4 + b) % 2;
        }
    }
    Case c{"model", name, R.options().tolerance_model, {{"input", x}}, nullptr};
    for (auto& p : net->parameters()) c.groups.emplace_back(p.name, p.tensor);
    c.build = [net, x, target](Tape<double>& t) {
        return ag::dice_loss(t, net->forward(t, t.parameter(*x), Mode::train), target, kDefaultDiceEpsilon);
    };
    auto r = R.run(c);
    out.insert(out.end(), r.begin(), r.end());
}

}  // namespace

GradcheckReport gradient_check(GradcheckScope scope, const GradcheckOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    Runner runner(options);
    Store store;
    GradcheckReport report;
    if (scope == GradcheckScope::layer || scope == GradcheckScope::all) layer_cases(runner, store, report.groups);
    if (scope == GradcheckScope::block || scope == GradcheckScope::all) block_cases(runner, store, report.groups);
    if (scope == GradcheckScope::model || scope == GradcheckScope::all) model_cases(runner, store, report.groups);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace cseg
