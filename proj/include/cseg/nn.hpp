#pragma once

// Composite layers built from tape ops. Every layer exposes visit(), which walks its
// tensors depth-first in a fixed order; that order defines checkpoint layout and the
// order in which the initializer draws random numbers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cseg/autograd.hpp"

namespace cseg {

enum class ParamKind { weight, bias, gamma, beta, buffer };

template <typename T>
struct ParamRef {
    std::string name;
    BasicTensor<T>* tensor;
    ParamKind kind;
    std::size_t fan_in;

    bool trainable() const { return kind != ParamKind::buffer; }
};

template <typename T>
struct Conv2d {
    std::size_t in_channels = 0, out_channels = 0, kernel = 3;
    int stride = 1, pad = 1;
    BasicTensor<T> weight, bias;

    Conv2d() = default;
    Conv2d(std::size_t cin, std::size_t cout, std::size_t k)
        : in_channels(cin),
          out_channels(cout),
          kernel(k),
          pad(static_cast<int>(k / 2)),
          weight(Shape{cout, cin, k, k}),
          bias(Shape{cout}) {}

    ag::Var forward(ag::Tape<T>& t, ag::Var x) const {
        return ag::conv2d(t, x, t.parameter(weight),
                          t.parameter(bias), stride, pad);
    }

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        const std::size_t fan_in = self.in_channels * self.kernel * self.kernel;
        fn(prefix + ".weight", self.weight, ParamKind::weight, fan_in);
        fn(prefix + ".bias", self.bias, ParamKind::bias, fan_in);
    }
};

template <typename T>
struct Dense {
    std::size_t in_features = 0, out_features = 0;
    BasicTensor<T> weight, bias;

    Dense() = default;
    Dense(std::size_t in, std::size_t out) : in_features(in), out_features(out), weight(Shape{out, in}), bias(Shape{out}) {}

    ag::Var forward(ag::Tape<T>& t, ag::Var x) const {
        return ag::dense(t, x, t.parameter(weight),
                         t.parameter(bias));
    }

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        fn(prefix + ".weight", self.weight, ParamKind::weight, self.in_features);
        fn(prefix + ".bias", self.bias, ParamKind::bias, self.in_features);
    }
};

// Stride-2 2x2 up-convolution; each output pixel sees exactly one input pixel per channel,
// so fan-in is the input channel count.
template <typename T>
struct UpConv {
    std::size_t in_channels = 0, out_channels = 0;
    BasicTensor<T> weight, bias;

    UpConv() = default;
    UpConv(std::size_t cin, std::size_t cout)
        : in_channels(cin), out_channels(cout), weight(Shape{cin, cout, 2, 2}), bias(Shape{cout}) {}

    ag::Var forward(ag::Tape<T>& t, ag::Var x) const {
        return ag::upconv2x2(t, x, t.parameter(weight),
                             t.parameter(bias));
    }

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        fn(prefix + ".weight", self.weight, ParamKind::weight, self.in_channels);
        fn(prefix + ".bias", self.bias, ParamKind::bias, self.in_channels);
    }
};

template <typename T>
struct BatchNorm2d {
    std::size_t channels = 0;
    BatchNormOptions options;
    BasicTensor<T> gamma, beta;
    // Updated only by train-mode forward; training owns the model exclusively.
    mutable RunningStats<T> stats;

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t c)
        : channels(c), gamma(Shape{c}, T(1)), beta(Shape{c}, T(0)), stats{BasicTensor<T>(Shape{c}, T(0)),
                                                                           BasicTensor<T>(Shape{c}, T(1))} {}

    ag::Var forward(ag::Tape<T>& t, ag::Var x, Mode mode) const {
        return ag::batchnorm2d(t, x, t.parameter(gamma),
                               t.parameter(beta), &stats, mode, options);
    }

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        fn(prefix + ".gamma", self.gamma, ParamKind::gamma, self.channels);
        fn(prefix + ".beta", self.beta, ParamKind::beta, self.channels);
        fn(prefix + ".running_mean", self.stats.mean, ParamKind::buffer, self.channels);
        fn(prefix + ".running_var", self.stats.var, ParamKind::buffer, self.channels);
    }
};

// conv3x3 -> norm -> ReLU -> conv3x3 -> norm -> ReLU. With `residual`, the second ReLU
// moves after the skip sum, and a 1x1 projection aligns the skip when widths differ.
template <typename T>
struct ConvBlock {
    std::size_t in_channels = 0, out_channels = 0;
    bool batchnorm = true;
    bool residual = false;
    Conv2d<T> conv1, conv2;
    std::optional<BatchNorm2d<T>> norm1, norm2;
    std::optional<Conv2d<T>> projection;

    ConvBlock() = default;
    ConvBlock(std::size_t cin, std::size_t cout, bool use_batchnorm, bool use_residual)
        : in_channels(cin),
          out_channels(cout),
          batchnorm(use_batchnorm),
          residual(use_residual),
          conv1(cin, cout, 3),
          conv2(cout, cout, 3) {
        if (batchnorm) {
            norm1.emplace(cout);
            norm2.emplace(cout);
        }
        if (residual && cin != cout) projection.emplace(cin, cout, 1);
    }

    ag::Var forward(ag::Tape<T>& t, ag::Var x, Mode mode) const {
        const auto& xv = t.value(x);
        if (xv.rank() != 4 || xv.dim(1) != in_channels) {
            throw ShapeError("ConvBlock expects " + std::to_string(in_channels) + " channels, got " +
                             xv.shape().str());
        }
        ag::Var h = conv1.forward(t, x);
        if (norm1) h = norm1->forward(t, h, mode);
        h = ag::relu(t, h);
        h = conv2.forward(t, h);
        if (norm2) h = norm2->forward(t, h, mode);
        if (residual) {
            ag::Var skip = projection ? projection->forward(t, x) : x;
            h = ag::add(t, h, skip);
        }
        return ag::relu(t, h);
    }

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        Conv2d<T>::visit(self.conv1, prefix + ".conv1", fn);
        if (self.norm1) BatchNorm2d<T>::visit(*self.norm1, prefix + ".norm1", fn);
        Conv2d<T>::visit(self.conv2, prefix + ".conv2", fn);
        if (self.norm2) BatchNorm2d<T>::visit(*self.norm2, prefix + ".norm2", fn);
        if (self.projection) Conv2d<T>::visit(*self.projection, prefix + ".projection", fn);
    }
};

// Squeeze-and-excitation: z = avgpool(x); s = sigmoid(fc2(relu(fc1(z)))); y = x * s.
template <typename T>
struct SEBlock {
    std::size_t channels = 0, ratio = 16, reduced = 1;
    Dense<T> fc1, fc2;

    SEBlock() = default;
    SEBlock(std::size_t c, std::size_t r)
        : channels(c), ratio(r), reduced(std::max<std::size_t>(c / std::max<std::size_t>(r, 1), 1)), fc1(c, reduced),
          fc2(reduced, c) {}

    ag::Var forward(ag::Tape<T>& t, ag::Var x) const {
        const auto& xv = t.value(x);
        if (xv.rank() != 4 || xv.dim(1) != channels) {
            throw ShapeError("SEBlock expects " + std::to_string(channels) + " channels, got " + xv.shape().str());
        }
        ag::Var z = ag::global_avg_pool(t, x);
        ag::Var s = ag::sigmoid(t, fc2.forward(t, ag::relu(t, fc1.forward(t, z))));
        return ag::channelwise_scale(t, x, s);
    }

    std::size_t param_count() const { return fc1.weight.size() + fc1.bias.size() + fc2.weight.size() + fc2.bias.size(); }

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        Dense<T>::visit(self.fc1, prefix + ".fc1", fn);
        Dense<T>::visit(self.fc2, prefix + ".fc2", fn);
    }
};

// He-normal (std = sqrt(2 / fan_in)) weights, zero biases, unit gamma, zero beta,
// running mean 0 / var 1. Draws happen in visit order from one seeded generator.
template <typename T, typename Layer>
void init_parameters(Layer& layer, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Layer::visit(layer, "", [&](const std::string& name, BasicTensor<T>& tensor, ParamKind kind, std::size_t fan_in) {
        switch (kind) {
            case ParamKind::weight: {
                std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
                for (auto& v : tensor.values()) v = static_cast<T>(dist(rng));
                break;
            }
            case ParamKind::bias:
            case ParamKind::beta:
                tensor.fill(T(0));
                break;
            case ParamKind::gamma:
                tensor.fill(T(1));
                break;
            case ParamKind::buffer:
                tensor.fill(name.ends_with("running_var") ? T(1) : T(0));
                break;
        }
    });
}

template <typename T, typename Layer>
std::vector<ParamRef<T>> collect_parameters(Layer& layer, const std::string& prefix, bool include_buffers) {
    std::vector<ParamRef<T>> out;
    Layer::visit(layer, prefix, [&](const std::string& name, BasicTensor<T>& tensor, ParamKind kind, std::size_t fan_in) {
        if (kind == ParamKind::buffer && !include_buffers) return;
        out.push_back({name, &tensor, kind, fan_in});
    });
    return out;
}

template <typename T, typename Layer>
std::size_t count_parameters(const Layer& layer) {
    std::size_t n = 0;
    Layer::visit(layer, "", [&](const std::string&, const BasicTensor<T>& tensor, ParamKind kind, std::size_t) {
        if (kind != ParamKind::buffer) n += tensor.size();
    });
    return n;
}

}  // namespace cseg
