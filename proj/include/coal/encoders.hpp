// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coal/container.hpp"
#include "coal/priors.hpp"
#include "coal/tensor.hpp"

namespace coal {

// Stand-ins for the frozen visual/text backbones. Everything here is a pure
// function of (input, seed); outputs never join a tape, so no gradient can
// reach an encoder table.
struct EncoderConfig {
    int d = 32;
    int map_h = 24;
    int map_w = 72;
    double noise_sigma = 0.0;
    std::uint64_t seed = 42;
};

template <typename T>
struct VisualFeatureMap {
    int height = 0, width = 0, dim = 0;
    Tensor<T> features;  // [H,W,d]
};

template <typename T>
struct TextEmbedding {
    Tensor<T> words;     // [L,d]
    Tensor<T> sentence;  // [d], mean of word embeddings
    std::vector<std::string> tokens;
};

// Per-word embedding table over a fixed vocabulary; out-of-vocabulary tokens
// map to a dedicated unknown vector.
template <typename T>
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(const std::vector<std::string>& vocabulary, int d, std::uint64_t seed);

    const Tensor<T>& lookup(const std::string& token) const;
    bool contains(const std::string& token) const { return table_.count(token) > 0; }
    int dim() const { return d_; }

private:
    int d_ = 0;
    std::map<std::string, Tensor<T>> table_;
    Tensor<T> unknown_;
};

std::vector<std::string> tokenize(const std::string& text);

template <typename T>
TextEmbedding<T> encode_text(const std::string& text, const EmbeddingTable<T>& table);

enum class ProviderMode { synthetic, precomputed };

template <typename T>
class FeatureProvider {
public:
    // synthetic mode: attribute vectors rasterized into map cells + noise
    FeatureProvider(const AttributeGrammar& grammar, const EncoderConfig& cfg);
    // precomputed mode: tensors served from a container, keyed
    // "<sequence>/<frame>/visual"
    FeatureProvider(const AttributeGrammar& grammar, const EncoderConfig& cfg,
                    const std::string& container_path);

    VisualFeatureMap<T> encode_frame(const SceneRecord& frame) const;
    TextEmbedding<T> encode_text(const std::string& text) const;

    ProviderMode mode() const { return mode_; }
    const EncoderConfig& config() const { return cfg_; }
    const EmbeddingTable<T>& table() const { return table_; }

    // attribute one-hot blocks in grammar slot order, projected to d
    Tensor<T> project_attributes(const std::map<std::string, std::string>& attributes) const;

private:
    EncoderConfig cfg_;
    ProviderMode mode_ = ProviderMode::synthetic;
    AttributeGrammar grammar_;
    EmbeddingTable<T> table_;
    Tensor<T> projection_;  // [attr_dim, d]
    std::optional<TensorContainer> precomputed_;
};

template <typename T>
Tensor<T> load_precomputed(const TensorContainer& container, const std::string& key);

}  // namespace coal
