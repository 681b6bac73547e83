#pragma once

// Differentiable primitives on (B, C, H, W) tensors. Each forward has a matching
// backward that takes the upstream gradient plus whatever the forward saved.

#include <cstdint>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

enum class Mode { train, eval };

template <typename T>
struct Conv2dGrads {
    BasicTensor<T> input;
    BasicTensor<T> weight;
    BasicTensor<T> bias;
};

// Cross-correlation with zero padding. weight is [Cout, Cin, k, k], bias is [Cout].
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                              int stride, int pad);

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input,
                               const BasicTensor<T>& weight, int stride, int pad);

template <typename T>
struct PoolResult {
    BasicTensor<T> output;
    // Flat index into the input of the element selected for each output element.
    std::vector<std::uint32_t> argmax;
    Shape input_shape;
};

// Disjoint 2x2 max pooling. Ties go to the first element in row-major order.
template <typename T>
PoolResult<T> maxpool2x2(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                                   const Shape& input_shape);

// Stride-2 2x2 transposed convolution. weight is [Cin, Cout, 2, 2]; bias is [Cout] or empty.
template <typename T>
BasicTensor<T> transposed_conv2x2(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                  const BasicTensor<T>& bias);

template <typename T>
Conv2dGrads<T> transposed_conv2x2_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input,
                                           const BasicTensor<T>& weight);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

// Gradient is zero where the saved input is <= 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_output);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Concatenates along the channel axis: result channels are [a..., b...].
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Splits a concat gradient back into the two input gradients.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out,
                                                                   std::size_t channels_a);

// y[b,c,:,:] = x[b,c,:,:] * s[b,c]
template <typename T>
BasicTensor<T> channelwise_scale(const BasicTensor<T>& x, const BasicTensor<T>& s);

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> channelwise_scale_backward(const BasicTensor<T>& grad_out,
                                                                     const BasicTensor<T>& x,
                                                                     const BasicTensor<T>& s);

// [B,C,H,W] -> [B,C] spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

// y = x * weight^T + bias; x is [B,Cin], weight is [Cout,Cin].
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

template <typename T>
Conv2dGrads<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input,
                              const BasicTensor<T>& weight);

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

// Running statistics; both tensors empty means "never trained".
template <typename T>
struct RunningStats {
    BasicTensor<T> mean;
    BasicTensor<T> var;

    bool empty() const { return mean.empty() || var.empty(); }
};

template <typename T>
struct BatchNormContext {
    BasicTensor<T> xhat;
    std::vector<T> inv_std;
    Mode mode = Mode::train;
};

// Train mode normalizes with biased batch statistics and folds them into `stats`
// (running var uses the unbiased estimate). Eval mode reads `stats` and throws if empty.
template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                           RunningStats<T>* stats, Mode mode, const BatchNormOptions& options,
                           BatchNormContext<T>* ctx = nullptr);

template <typename T>
struct BatchNormGrads {
    BasicTensor<T> input;
    BasicTensor<T> gamma;
    BasicTensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BasicTensor<T>& grad_out, const BatchNormContext<T>& ctx,
                                       const BasicTensor<T>& gamma);

}  // namespace cseg
