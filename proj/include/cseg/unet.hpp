#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cseg/config.hpp"
#include "cseg/nn.hpp"

namespace cseg {

// U-Net with optional squeeze-and-excitation on every encoder stage and the bottleneck.
//
//   encoder i (0..N-1): ConvBlock(-> F0*2^i) [+ SE] -> skip_i, then 2x2 max pool
//   bottleneck:         ConvBlock(-> MF) [+ SE]
//   decoder i (N-1..0): up-conv halving width, concat [skip_i, up], ConvBlock(-> F0*2^i)
//   head:               1x1 conv to one logit, sigmoid
//
// F0 = MF / 2^N. All 3x3 convolutions use same padding, so the output is IS x IS.
template <typename T>
class UNet {
public:
    struct EncoderStage {
        ConvBlock<T> block;
        std::optional<SEBlock<T>> se;
    };
    struct DecoderStage {
        UpConv<T> up;
        ConvBlock<T> block;
    };

    explicit UNet(const UNetConfig& config, std::uint64_t seed = 0) : config_(config) {
        config_.validate();
        const auto f = [&](int stage) { return static_cast<std::size_t>(config_.stage_width(stage)); };
        const auto ratio = static_cast<std::size_t>(config_.se_ratio);
        std::size_t in = static_cast<std::size_t>(config_.in_channels);
        for (int i = 0; i < config_.depth; ++i) {
            EncoderStage s{ConvBlock<T>(in, f(i), config_.batchnorm, config_.use_residual), std::nullopt};
            if (config_.use_se) s.se.emplace(f(i), ratio);
            encoder_.push_back(std::move(s));
            in = f(i);
        }
        bottleneck_.block = ConvBlock<T>(in, f(config_.depth), config_.batchnorm, config_.use_residual);
        if (config_.use_se) bottleneck_.se.emplace(f(config_.depth), ratio);
        for (int i = config_.depth - 1; i >= 0; --i) {
            decoder_.push_back(
                DecoderStage{UpConv<T>(f(i + 1), f(i)), ConvBlock<T>(2 * f(i), f(i), config_.batchnorm, config_.use_residual)});
        }
        head_ = Conv2d<T>(f(0), 1, 1);
        init_parameters<T>(*this, seed);
    }

    const UNetConfig& config() const { return config_; }
    const std::vector<EncoderStage>& encoder() const { return encoder_; }
    const EncoderStage& bottleneck() const { return bottleneck_; }
    const std::vector<DecoderStage>& decoder() const { return decoder_; }

    // Output of the last decoder block (F0 channels, IS x IS), before the head.
    ag::Var features(ag::Tape<T>& t, ag::Var x, Mode mode) const {
        check_input(t.value(x));
        std::vector<ag::Var> skips;
        ag::Var h = x;
        for (const auto& stage : encoder_) {
            h = stage.block.forward(t, h, mode);
            if (stage.se) h = stage.se->forward(t, h);
            skips.push_back(h);
            h = ag::maxpool2x2(t, h);
        }
        h = bottleneck_.block.forward(t, h, mode);
        if (bottleneck_.se) h = bottleneck_.se->forward(t, h);
        for (std::size_t k = 0; k < decoder_.size(); ++k) {
            const auto& stage = decoder_[k];
            ag::Var up = stage.up.forward(t, h);
            h = ag::concat_channels(t, skips[skips.size() - 1 - k], up);
            h = stage.block.forward(t, h, mode);
        }
        return h;
    }

    ag::Var logits(ag::Tape<T>& t, ag::Var x, Mode mode) const { return head_.forward(t, features(t, x, mode)); }

    // Per-pixel crop probabilities, [B, 1, IS, IS].
    ag::Var forward(ag::Tape<T>& t, ag::Var x, Mode mode) const { return ag::sigmoid(t, logits(t, x, mode)); }

    // Eval-mode probabilities without recording gradients. Safe to call concurrently.
    BasicTensor<T> predict(const BasicTensor<T>& batch) const {
        ag::Tape<T> tape(false);
        ag::Var out = forward(tape, tape.constant(batch), Mode::eval);
        return tape.value(out);
    }

    std::vector<ParamRef<T>> parameters() { return collect_parameters<T>(*this, "", false); }
    // Trainable tensors plus normalization buffers, in checkpoint order.
    std::vector<ParamRef<T>> state() { return collect_parameters<T>(*this, "", true); }

    std::size_t param_count() const { return count_parameters<T>(*this); }

    std::vector<std::size_t> encoder_widths() const {
        std::vector<std::size_t> w;
        for (const auto& s : encoder_) w.push_back(s.block.out_channels);
        return w;
    }
    std::size_t bottleneck_width() const { return bottleneck_.block.out_channels; }

    // Number of places an SE block sits (0 when SE is off).
    std::size_t se_sites() const {
        std::size_t n = bottleneck_.se ? 1 : 0;
        for (const auto& s : encoder_) n += s.se ? 1 : 0;
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor->zero_grad();
    }

    template <typename U>
    UNet<U> cast() const {
        UNet<U> out(config_, 0);
        auto dst = out.state();
        std::size_t i = 0;
        visit(*this, "", [&](const std::string&, const BasicTensor<T>& src, ParamKind, std::size_t) {
            *dst[i++].tensor = src.template cast<U>();
        });
        return out;
    }

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        const std::string p = prefix.empty() ? "" : prefix + ".";
        for (std::size_t i = 0; i < self.encoder_.size(); ++i) {
            auto& s = self.encoder_[i];
            ConvBlock<T>::visit(s.block, p + "enc" + std::to_string(i) + ".block", fn);
            if (s.se) SEBlock<T>::visit(*s.se, p + "enc" + std::to_string(i) + ".se", fn);
        }
        ConvBlock<T>::visit(self.bottleneck_.block, p + "bottleneck.block", fn);
        if (self.bottleneck_.se) SEBlock<T>::visit(*self.bottleneck_.se, p + "bottleneck.se", fn);
        for (std::size_t k = 0; k < self.decoder_.size(); ++k) {
            const std::string name = p + "dec" + std::to_string(self.decoder_.size() - 1 - k);
            UpConv<T>::visit(self.decoder_[k].up, name + ".up", fn);
            ConvBlock<T>::visit(self.decoder_[k].block, name + ".block", fn);
        }
        Conv2d<T>::visit(self.head_, p + "head", fn);
    }

private:
    void check_input(const BasicTensor<T>& x) const {
        const auto is = static_cast<std::size_t>(config_.input_size);
        if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(config_.in_channels) || x.dim(2) != is ||
            x.dim(3) != is) {
            throw ShapeError("model " + config_.name() + " expects [B," + std::to_string(config_.in_channels) + "," +
                             std::to_string(is) + "," + std::to_string(is) + "], got " + x.shape().str());
        }
    }

    UNetConfig config_;
    std::vector<EncoderStage> encoder_;
    EncoderStage bottleneck_;
    std::vector<DecoderStage> decoder_;
    Conv2d<T> head_;
};

using Model = UNet<float>;

// Parses an architecture name and builds the model with deterministic parameters.
inline Model build_model(const std::string& name, std::uint64_t seed = 0) { return Model(parse_config_name(name), seed); }

}  // namespace cseg
