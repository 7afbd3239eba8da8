// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "coal/common.hpp"

namespace coal {

template <typename T>
class Tape;

template <typename T>
struct TapeCore;

// Dense row-major tensor. Data is shared between copies; shapes are small
// (rank <= 3 in practice). A tensor optionally points at a node on the
// active tape; the pointer is weak so tensors outliving the tape silently
// degrade to constants.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<T> values, bool requires_grad = false)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(std::move(values))),
          requires_grad_(requires_grad) {
        if (numel_from_shape(shape_) != data_->size())
            throw std::invalid_argument("Tensor: shape does not match data length");
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        std::size_t n = numel_from_shape(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }
    static Tensor full(std::vector<int> shape, T value, bool requires_grad = false) {
        std::size_t n = numel_from_shape(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }
    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    const std::vector<T>& data() const { return *data_; }
    std::vector<T>& mutable_data() { return *data_; }
    const std::shared_ptr<std::vector<T>>& storage() const { return data_; }

    T value() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::value: tensor is not scalar");
        return (*data_)[0];
    }
    T at(std::size_t i) const { return (*data_)[i]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool b) { requires_grad_ = b; }

    // node handle on the active tape, -1 when untracked
    int node_id() const { return node_; }
    bool tracked() const;
    std::shared_ptr<TapeCore<T>> tape() const { return tape_.lock(); }

    // Same storage reinterpreted with a new shape. Tracked tensors keep their
    // node id: tape gradients are flat, so views need no extra node.
    Tensor reshaped(std::vector<int> shape) const {
        if (numel_from_shape(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

    Tensor detached() const {
        Tensor out = *this;
        out.tape_.reset();
        out.node_ = -1;
        out.requires_grad_ = false;
        return out;
    }

    Tensor clone() const {
        return Tensor(shape_, *data_, requires_grad_);
    }

    // internal: used by op recording
    void attach_(const std::shared_ptr<TapeCore<T>>& core, int node) {
        tape_ = core;
        node_ = node;
        requires_grad_ = true;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_->size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    static std::size_t numel_from_shape(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

private:
    friend class Tape<T>;
    std::vector<int> shape_{0};
    std::shared_ptr<std::vector<T>> data_;
    bool requires_grad_ = false;
    std::weak_ptr<TapeCore<T>> tape_;
    int node_ = -1;
};

// One recorded operation. `inputs` hold node ids (-1 for untracked inputs);
// `vjp` accumulates this node's output gradient into its inputs' buffers.
template <typename T>
struct TapeNode {
    std::vector<int> inputs;
    std::size_t out_size = 0;
    std::function<void(TapeCore<T>&, const std::vector<T>&)> vjp;
};

template <typename T>
struct TapeCore {
    std::vector<TapeNode<T>> nodes;
    std::vector<std::vector<T>> grads;  // parallel to nodes, filled by backward

    int add_node(TapeNode<T> node) {
        nodes.push_back(std::move(node));
        grads.emplace_back();
        return static_cast<int>(nodes.size()) - 1;
    }

    std::vector<T>& grad_buffer(int node) {
        auto& g = grads[static_cast<std::size_t>(node)];
        if (g.empty() && nodes[static_cast<std::size_t>(node)].out_size > 0)
            g.assign(nodes[static_cast<std::size_t>(node)].out_size, T(0));
        return g;
    }
};

template <typename T>
bool Tensor<T>::tracked() const {
    return node_ >= 0 && !tape_.expired();
}

// Reverse-mode tape. Nodes are appended in execution order, so every node's
// inputs precede it; backward walks the list once in reverse.
template <typename T>
class Tape {
public:
    Tape() : core_(std::make_shared<TapeCore<T>>()) {}

    // Registers a leaf. The tensor is annotated in place so parameter structs
    // can be bound for one training step without copying storage.
    void watch(Tensor<T>& t) {
        t.tape_ = core_;
        t.node_ = core_->add_node(TapeNode<T>{{}, t.numel(), nullptr});
        t.requires_grad_ = true;
    }

    std::size_t size() const { return core_->nodes.size(); }
    const std::shared_ptr<TapeCore<T>>& core() const { return core_; }

    // Reverse accumulation from a scalar loss. Returns per-node gradients for
    // the watched leaves (query via grad()).
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) throw std::invalid_argument("backward: loss is not scalar");
        if (!loss.tracked() || loss.tape() != core_)
            throw std::invalid_argument("backward: loss is not on this tape");
        core_->grads.assign(core_->nodes.size(), {});
        core_->grad_buffer(loss.node_id())[0] = T(1);
        for (int i = static_cast<int>(core_->nodes.size()) - 1; i >= 0; --i) {
            auto& node = core_->nodes[static_cast<std::size_t>(i)];
            auto& g = core_->grads[static_cast<std::size_t>(i)];
            if (g.empty() || !node.vjp) continue;
            node.vjp(*core_, g);
        }
        ran_backward_ = true;
    }

    // Gradient of a watched tensor after backward(); zeros if never reached.
    Tensor<T> grad(const Tensor<T>& t) const {
        if (!ran_backward_) throw std::logic_error("Tape::grad: backward has not run");
        if (!t.tracked() || t.tape() != core_)
            throw std::invalid_argument("Tape::grad: tensor is not on this tape");
        const auto& g = core_->grads[static_cast<std::size_t>(t.node_id())];
        if (g.empty()) return Tensor<T>::zeros(t.shape());
        return Tensor<T>(t.shape(), g);
    }

private:
    std::shared_ptr<TapeCore<T>> core_;
    bool ran_backward_ = false;
};

// Named model weight. Frozen parameters are never watched, so they cannot
// appear in a gradient map and optimizer steps skip them.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    bool frozen = false;
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

}  // namespace coal
