// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coal/tensor.hpp"

namespace coal {

// Non-owning view of a model weight; `tensor` points into the model struct so
// tape binding annotates the header the forward pass actually reads.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
    bool frozen = false;
};

template <typename T>
using ParamRefs = std::vector<ParamRef<T>>;

// Registers every non-frozen parameter as a tape leaf.
template <typename T>
void bind_params(Tape<T>& tape, ParamRefs<T>& params) {
    for (auto& p : params)
        if (!p.frozen) tape.watch(*p.tensor);
}

// Reverse pass + per-parameter gradient extraction. Frozen parameters are
// absent from the result; bound-but-unused parameters map to zero tensors.
template <typename T>
GradMap<T> backward(Tape<T>& tape, const Tensor<T>& loss, const ParamRefs<T>& params) {
    tape.backward(loss);
    GradMap<T> out;
    for (const auto& p : params) {
        if (p.frozen) continue;
        out.emplace(p.name, tape.grad(*p.tensor));
    }
    return out;
}

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
    std::int64_t step = 0;
    std::map<std::string, Tensor<T>> m;
    std::map<std::string, Tensor<T>> v;
};

// Decoupled-weight-decay Adam. Frozen parameters are untouched; a missing
// gradient for a live parameter is an error.
template <typename T>
void adamw_step(ParamRefs<T>& params, const GradMap<T>& grads, AdamWState<T>& state,
                const AdamWConfig& cfg);

}  // namespace coal
