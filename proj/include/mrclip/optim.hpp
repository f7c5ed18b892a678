#pragma once

#include "mrclip/error.hpp"
#include "mrclip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mrclip::ad {

/// A trainable tensor plus whether decoupled weight decay applies to it.
template <class T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor = nullptr;
    bool decay = true;
};

/// Adam with bias correction and decoupled weight decay.
template <class T>
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    long step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// Linear ramp from lr/W to lr over the first W steps, flat afterwards.
inline double warmup_lr(double base_lr, long step, long warmup_steps) {
    if (warmup_steps <= 0) {
        return base_lr;
    }
    return base_lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup_steps));
}

/// One update at learning rate `lr` (the caller applies any schedule):
///   p -= lr * wd * p                      (decayed params only)
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   p -= lr * m_hat / (sqrt(v_hat) + eps)
template <class T>
void adam_step(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor->size(), T(0));
            state.v.emplace_back(p.tensor->size(), T(0));
        }
    }
    require(state.m.size() == params.size(), ErrorCode::ShapeMismatch, "optimizer state has a different parameter count");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k].tensor;
        require(p.has_grad() && p.grad().size() == p.size() && state.m[k].size() == p.size(), ErrorCode::ShapeMismatch,
                "parameter '" + params[k].name + "' has no matching gradient/moment buffers");
        auto data = p.data();
        auto grad = p.grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        const double decay = params[k].decay ? lr * state.weight_decay : 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            double w = data[i];
            w -= decay * w;
            m[i] = static_cast<T>(state.beta1 * m[i] + (1.0 - state.beta1) * g);
            v[i] = static_cast<T>(state.beta2 * v[i] + (1.0 - state.beta2) * g * g);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w -= lr * mhat / (std::sqrt(vhat) + state.eps);
            data[i] = static_cast<T>(w);
        }
    }
}

template <class T>
void zero_grads(const std::vector<ParamRef<T>>& params) {
    for (const auto& p : params) {
        p.tensor->zero_grad();
    }
}

} // namespace mrclip::ad
