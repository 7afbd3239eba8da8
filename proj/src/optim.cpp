// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace coal {

template <typename T>
void adamw_step(ParamRefs<T>& params, const GradMap<T>& grads, AdamWState<T>& state,
                const AdamWConfig& cfg) {
    state.step += 1;
    const T beta1 = static_cast<T>(cfg.beta1);
    const T beta2 = static_cast<T>(cfg.beta2);
    const T lr = static_cast<T>(cfg.lr);
    const T eps = static_cast<T>(cfg.eps);
    const T wd = static_cast<T>(cfg.weight_decay);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.step)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.step)));
    for (auto& p : params) {
        if (p.frozen) continue;
        auto git = grads.find(p.name);
        if (git == grads.end())
            throw std::invalid_argument("adamw_step: missing gradient for parameter " + p.name);
        const auto& g = git->second.data();
        auto mit = state.m.find(p.name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(p.name, Tensor<T>::zeros(p.tensor->shape())).first;
            state.v.emplace(p.name, Tensor<T>::zeros(p.tensor->shape()));
        }
        auto& m = mit->second.mutable_data();
        auto& v = state.v.at(p.name).mutable_data();
        auto& w = p.tensor->mutable_data();
        if (g.size() != w.size())
            throw std::invalid_argument("adamw_step: gradient shape mismatch for " + p.name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
            v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[i]);
        }
    }
}

template void adamw_step<float>(ParamRefs<float>&, const GradMap<float>&, AdamWState<float>&,
                                const AdamWConfig&);
template void adamw_step<double>(ParamRefs<double>&, const GradMap<double>&, AdamWState<double>&,
                                 const AdamWConfig&);

}  // namespace coal
