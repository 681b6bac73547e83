#pragma once

// Reverse-mode tape over the primitives in ops.hpp. A Tape records each op's output and
// a closure that maps the output gradient onto its parents; backward() replays the
// closures in reverse order. Parameters are referenced, not copied, and their gradients
// accumulate straight into the parameter tensor's grad buffer.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cseg/metrics.hpp"
#include "cseg/ops.hpp"
#include "cseg/tensor.hpp"

namespace cseg::ag {

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

// Test hook: when nonzero, conv2d weight gradients are scaled by (1 + fault).
// Lets the gradient checker prove it notices a broken backward.
inline std::atomic<double> backward_fault{0.0};

// When set, ReLU masks and max-pool winners are folded into this hash. Two forward passes
// with equal hashes took the same branch at every kink, so a finite difference between
// them is meaningful.
inline thread_local std::uint64_t* decision_trace = nullptr;

inline void trace_decision(std::uint64_t v) {
    if (decision_trace) *decision_trace = (*decision_trace ^ v) * 0x100000001b3ULL;
}

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const BasicTensor<T>&, Var)>;

    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    Var constant(BasicTensor<T> value) { return push_leaf(std::move(value), nullptr, false); }
    // Leaf whose gradient is tracked and kept after backward().
    Var input(BasicTensor<T> value) { return push_leaf(std::move(value), nullptr, record_); }
    // Gradients flow into p's grad buffer, and only while recording; a recording tape
    // therefore implies exclusive ownership of the parameters it touches.
    Var parameter(const BasicTensor<T>& p) { return push_leaf({}, const_cast<BasicTensor<T>*>(&p), record_); }

    const BasicTensor<T>& value(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.external ? *n.external : n.value;
    }

    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    // Gradient of a non-parameter leaf after backward(); empty if nothing flowed into it.
    const BasicTensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

    Var push(BasicTensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
        bool needs = false;
        if (record_) {
            for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
        }
        Node n;
        n.value = std::move(value);
        n.requires_grad = needs;
        if (needs) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    void accumulate(Var v, BasicTensor<T> g) {
        Node& n = nodes_.at(v.id);
        if (!n.requires_grad) return;
        if (n.external) {
            auto dst = n.external->ensure_grad();
            if (dst.size() != g.size()) throw ShapeError("gradient size mismatch for parameter");
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
            return;
        }
        if (n.grad.empty()) {
            n.grad = std::move(g);
        } else {
            if (n.grad.shape() != g.shape()) throw ShapeError("gradient shape mismatch on tape node");
            for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
        }
    }

    // Seeds d(root)/d(root) = 1 for a single-element root and propagates.
    void backward(Var root) {
        if (!record_) throw Error("backward on a non-recording tape");
        if (value(root).size() != 1) throw ShapeError("backward root must hold exactly one element");
        Node& r = nodes_.at(root.id);
        if (!r.requires_grad) return;
        BasicTensor<T> seed(value(root).shape(), T(1));
        r.grad = seed;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.empty()) continue;
            BasicTensor<T> g = std::move(n.grad);
            n.grad = BasicTensor<T>();
            n.backward(*this, g, Var{i});
            n.backward = nullptr;
        }
    }

private:
    struct Node {
        BasicTensor<T> value;
        BasicTensor<T>* external = nullptr;
        BasicTensor<T> grad;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var push_leaf(BasicTensor<T> value, BasicTensor<T>* external, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.external = external;
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    bool record_;
    std::vector<Node> nodes_;
};

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, int stride, int pad) {
    auto y = conv2d_forward(t.value(x), t.value(w), t.value(b), stride, pad);
    return t.push(std::move(y), {x, w, b}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        auto grads = conv2d_backward(g, tp.value(x), tp.value(w), stride, pad);
        if (const double f = backward_fault.load(); f != 0.0) {
            for (auto& v : grads.weight.values()) v = static_cast<T>(v * (1.0 + f));
        }
        tp.accumulate(x, grads.input);
        tp.accumulate(w, grads.weight);
        tp.accumulate(b, grads.bias);
    });
}

template <typename T>
Var maxpool2x2(Tape<T>& t, Var x) {
    auto r = cseg::maxpool2x2(t.value(x));
    auto idx = std::make_shared<std::vector<std::uint32_t>>(std::move(r.argmax));
    if (decision_trace) {
        for (std::uint32_t i : *idx) trace_decision(i);
    }
    Shape in_shape = r.input_shape;
    return t.push(std::move(r.output), {x}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        tp.accumulate(x, maxpool2x2_backward(g, *idx, in_shape));
    });
}

template <typename T>
Var upconv2x2(Tape<T>& t, Var x, Var w, Var b) {
    auto y = transposed_conv2x2(t.value(x), t.value(w), t.value(b));
    return t.push(std::move(y), {x, w, b}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        auto grads = transposed_conv2x2_backward(g, tp.value(x), tp.value(w));
        tp.accumulate(x, grads.input);
        tp.accumulate(w, grads.weight);
        tp.accumulate(b, grads.bias);
    });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
    if (decision_trace) {
        for (T v : t.value(x).values()) trace_decision(v > T(0) ? 1 : 2);
    }
    return t.push(cseg::relu(t.value(x)), {x}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        tp.accumulate(x, relu_backward(g, tp.value(x)));
    });
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
    return t.push(cseg::sigmoid(t.value(x)), {x}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var self) {
        tp.accumulate(x, sigmoid_backward(g, tp.value(self)));
    });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
    return t.push(cseg::add(t.value(a), t.value(b)), {a, b}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

template <typename T>
Var concat_channels(Tape<T>& t, Var a, Var b) {
    const std::size_t ca = t.value(a).dim(1);
    return t.push(cseg::concat_channels(t.value(a), t.value(b)), {a, b},
                  [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
                      auto [ga, gb] = concat_channels_backward(g, ca);
                      tp.accumulate(a, ga);
                      tp.accumulate(b, gb);
                  });
}

template <typename T>
Var channelwise_scale(Tape<T>& t, Var x, Var s) {
    return t.push(cseg::channelwise_scale(t.value(x), t.value(s)), {x, s},
                  [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
                      auto [gx, gs] = channelwise_scale_backward(g, tp.value(x), tp.value(s));
                      tp.accumulate(x, gx);
                      tp.accumulate(s, gs);
                  });
}

template <typename T>
Var global_avg_pool(Tape<T>& t, Var x) {
    Shape in_shape = t.value(x).shape();
    return t.push(cseg::global_avg_pool(t.value(x)), {x}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        tp.accumulate(x, global_avg_pool_backward(g, in_shape));
    });
}

template <typename T>
Var dense(Tape<T>& t, Var x, Var w, Var b) {
    return t.push(cseg::dense(t.value(x), t.value(w), t.value(b)), {x, w, b},
                  [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
                      auto grads = dense_backward(g, tp.value(x), tp.value(w));
                      tp.accumulate(x, grads.input);
                      tp.accumulate(w, grads.weight);
                      tp.accumulate(b, grads.bias);
                  });
}

template <typename T>
Var batchnorm2d(Tape<T>& t, Var x, Var gamma, Var beta, RunningStats<T>* stats, Mode mode,
                const BatchNormOptions& options) {
    auto ctx = std::make_shared<BatchNormContext<T>>();
    auto y = cseg::batchnorm2d(t.value(x), t.value(gamma), t.value(beta), stats, mode, options,
                               t.recording() ? ctx.get() : nullptr);
    return t.push(std::move(y), {x, gamma, beta}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        auto grads = batchnorm2d_backward(g, *ctx, tp.value(gamma));
        tp.accumulate(x, grads.input);
        tp.accumulate(gamma, grads.gamma);
        tp.accumulate(beta, grads.beta);
    });
}

// 1 - soft Dice of pred against a fixed target; single-element result.
template <typename T>
Var dice_loss(Tape<T>& t, Var pred, const BasicTensor<T>& target, double epsilon) {
    const double loss = cseg::dice_loss(t.value(pred), target, epsilon);
    auto tgt = std::make_shared<BasicTensor<T>>(target);
    return t.push(BasicTensor<T>(Shape{1}, static_cast<T>(loss)), {pred},
                  [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
                      auto gp = dice_loss_grad(tp.value(pred), *tgt, epsilon);
                      for (auto& v : gp.values()) v *= g[0];
                      tp.accumulate(pred, gp);
                  });
}

template <typename T>
Var bce_loss(Tape<T>& t, Var pred, const BasicTensor<T>& target) {
    const double loss = cseg::bce_loss(t.value(pred), target);
    auto tgt = std::make_shared<BasicTensor<T>>(target);
    return t.push(BasicTensor<T>(Shape{1}, static_cast<T>(loss)), {pred},
                  [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
                      auto gp = bce_loss_grad(tp.value(pred), *tgt);
                      for (auto& v : gp.values()) v *= g[0];
                      tp.accumulate(pred, gp);
                  });
}

// wa*a + wb*b for single-element a, b.
template <typename T>
Var weighted_sum(Tape<T>& t, Var a, double wa, Var b, double wb) {
    const T v = static_cast<T>(wa * t.value(a)[0] + wb * t.value(b)[0]);
    return t.push(BasicTensor<T>(Shape{1}, v), {a, b}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        tp.accumulate(a, BasicTensor<T>(Shape{1}, static_cast<T>(wa * g[0])));
        tp.accumulate(b, BasicTensor<T>(Shape{1}, static_cast<T>(wb * g[0])));
    });
}

// sum(x * weights): a fixed random projection turns any tensor op into a scalar for gradient checks.
template <typename T>
Var project(Tape<T>& t, Var x, const BasicTensor<T>& weights) {
    const auto& xv = t.value(x);
    if (xv.shape() != weights.shape()) throw ShapeError("project: shape mismatch");
    T acc = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * weights[i];
    auto w = std::make_shared<BasicTensor<T>>(weights);
    return t.push(BasicTensor<T>(Shape{1}, acc), {x}, [=](Tape<T>& tp, const BasicTensor<T>& g, Var) {
        BasicTensor<T> gx = *w;
        for (auto& v : gx.values()) v *= g[0];
        tp.accumulate(x, gx);
    });
}

}  // namespace cseg::ag
