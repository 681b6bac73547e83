#include "cseg/optim.hpp"

#include <cmath>

namespace cseg {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must be in [0,1)");
    if (!(eps > 0)) throw ConfigError("adam eps must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0,1)");
}

namespace {

template <typename T>
void check_finite(std::span<const ParamRef<T>> params) {
    for (const auto& p : params) {
        if (!p.tensor->has_grad()) continue;
        for (T g : p.tensor->grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
        }
    }
}

template <typename T>
void ensure_slots(std::span<const ParamRef<T>> params, OptimizerState<T>& state, OptimizerKind kind) {
    if (state.first.empty() && state.second.empty() && state.step == 0) {
        state.kind = kind;
        for (const auto& p : params) {
            state.first.emplace_back(p.tensor->shape());
            if (kind == OptimizerKind::adam) state.second.emplace_back(p.tensor->shape());
        }
    }
    if (state.kind != kind) throw ConfigError("optimizer state kind does not match configured optimizer");
    const std::size_t want_second = kind == OptimizerKind::adam ? params.size() : 0;
    if (state.first.size() != params.size() || state.second.size() != want_second) {
        throw ConfigError("optimizer state does not match parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first[i].shape() != params[i].tensor->shape()) {
            throw ConfigError("optimizer state shape mismatch for " + params[i].name);
        }
    }
}

}  // namespace

template <typename T>
void adam_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, const OptimizerConfig& config) {
    check_finite(params);
    ensure_slots(params, state, OptimizerKind::adam);
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        BasicTensor<T>& w = *params[i].tensor;
        if (!w.has_grad()) continue;
        auto g = w.grad();
        auto& m = state.first[i];
        auto& v = state.second[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] = static_cast<T>(w[j] - config.learning_rate * mhat / (std::sqrt(vhat) + config.eps));
        }
    }
}

template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, const OptimizerConfig& config) {
    check_finite(params);
    if (!(config.momentum >= 0 && config.momentum < 1)) throw ConfigError("momentum must be in [0,1)");
    ensure_slots(params, state, OptimizerKind::sgd);
    state.step += 1;
    const T mu = static_cast<T>(config.momentum), lr = static_cast<T>(config.learning_rate);
    for (std::size_t i = 0; i < params.size(); ++i) {
        BasicTensor<T>& w = *params[i].tensor;
        if (!w.has_grad()) continue;
        auto g = w.grad();
        auto& vel = state.first[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            vel[j] = mu * vel[j] + g[j];
            w[j] -= lr * vel[j];
        }
    }
}

template <typename T>
void optimizer_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, const OptimizerConfig& config) {
    if (config.kind == OptimizerKind::adam) {
        adam_step(params, state, config);
    } else {
        sgd_step(params, state, config);
    }
}

template <typename T>
double clip_grad_norm(std::span<const ParamRef<T>> params, double max_norm) {
    double sq = 0;
    for (const auto& p : params) {
        if (!p.tensor->has_grad()) continue;
        for (T g : p.tensor->grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (const auto& p : params) {
            if (!p.tensor->has_grad()) continue;
            for (T& g : p.tensor->grad()) g *= scale;
        }
    }
    return norm;
}

#define CSEG_INSTANTIATE_OPTIM(T)                                                                              \
    template void adam_step(std::span<const ParamRef<T>>, OptimizerState<T>&, const OptimizerConfig&);         \
    template void sgd_step(std::span<const ParamRef<T>>, OptimizerState<T>&, const OptimizerConfig&);          \
    template void optimizer_step(std::span<const ParamRef<T>>, OptimizerState<T>&, const OptimizerConfig&);    \
    template double clip_grad_norm(std::span<const ParamRef<T>>, double);

CSEG_INSTANTIATE_OPTIM(float)
CSEG_INSTANTIATE_OPTIM(double)

#undef CSEG_INSTANTIATE_OPTIM

}  // namespace cseg
