#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cseg/nn.hpp"

namespace cseg {

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;  // SGD only

    void validate() const;
};

// Adam keeps first/second moments; SGD keeps its velocity in `first`.
template <typename T>
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    std::uint64_t step = 0;
    std::vector<BasicTensor<T>> first;
    std::vector<BasicTensor<T>> second;
};

// Both steps read gradients from each parameter's grad buffer (missing buffer = zero gradient)
// and throw NumericError naming the tensor if any gradient is non-finite; nothing is updated then.
template <typename T>
void adam_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, const OptimizerConfig& config);

template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, const OptimizerConfig& config);

template <typename T>
void optimizer_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, const OptimizerConfig& config);

// Rescales gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(std::span<const ParamRef<T>> params, double max_norm);

}  // namespace cseg
