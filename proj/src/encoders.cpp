// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace coal {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

namespace {

// unit-scale Gaussian word vector derived from (seed, tag); independent of
// vocabulary order
template <typename T>
Tensor<T> seeded_vector(std::uint64_t seed, const std::string& tag, int d) {
    Rng rng = Rng::derive(seed, tag);
    std::vector<T> v(static_cast<std::size_t>(d));
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& x : v) x = static_cast<T>(rng.gaussian() * inv);
    return Tensor<T>({d}, std::move(v));
}

}  // namespace

template <typename T>
EmbeddingTable<T>::EmbeddingTable(const std::vector<std::string>& vocabulary, int d,
                                  std::uint64_t seed)
    : d_(d) {
    for (const auto& word : vocabulary) table_[word] = seeded_vector<T>(seed, "embed." + word, d);
    unknown_ = seeded_vector<T>(seed, "embed.<unk>", d);
}

template <typename T>
const Tensor<T>& EmbeddingTable<T>::lookup(const std::string& token) const {
    auto it = table_.find(token);
    return it != table_.end() ? it->second : unknown_;
}

template <typename T>
TextEmbedding<T> encode_text(const std::string& text, const EmbeddingTable<T>& table) {
    TextEmbedding<T> out;
    out.tokens = tokenize(text);
    if (out.tokens.empty()) throw ValidationError("encode_text: empty text after normalization");
    const int d = table.dim();
    const int l = static_cast<int>(out.tokens.size());
    std::vector<T> words(static_cast<std::size_t>(l) * d);
    std::vector<T> sent(static_cast<std::size_t>(d), T(0));
    for (int i = 0; i < l; ++i) {
        const auto& v = table.lookup(out.tokens[static_cast<std::size_t>(i)]).data();
        for (int j = 0; j < d; ++j) {
            words[static_cast<std::size_t>(i) * d + j] = v[static_cast<std::size_t>(j)];
            sent[static_cast<std::size_t>(j)] += v[static_cast<std::size_t>(j)];
        }
    }
    const T inv = T(1) / static_cast<T>(l);
    for (auto& x : sent) x *= inv;
    out.words = Tensor<T>({l, d}, std::move(words));
    out.sentence = Tensor<T>({d}, std::move(sent));
    return out;
}

template <typename T>
FeatureProvider<T>::FeatureProvider(const AttributeGrammar& grammar, const EncoderConfig& cfg)
    : cfg_(cfg), mode_(ProviderMode::synthetic), grammar_(grammar),
      table_(grammar.full_vocabulary(), cfg.d, cfg.seed) {
    const int attr_dim = grammar_.attribute_dim();
    Rng rng = Rng::derive(cfg_.seed, "encoder.projection");
    std::vector<T> p(static_cast<std::size_t>(attr_dim) * cfg_.d);
    const double inv = 1.0 / std::sqrt(static_cast<double>(attr_dim));
    for (auto& x : p) x = static_cast<T>(rng.gaussian() * inv);
    projection_ = Tensor<T>({attr_dim, cfg_.d}, std::move(p));
}

template <typename T>
FeatureProvider<T>::FeatureProvider(const AttributeGrammar& grammar, const EncoderConfig& cfg,
                                    const std::string& container_path)
    : FeatureProvider(grammar, cfg) {
    mode_ = ProviderMode::precomputed;
    precomputed_ = TensorContainer::load(container_path);
}

template <typename T>
Tensor<T> FeatureProvider<T>::project_attributes(
    const std::map<std::string, std::string>& attributes) const {
    const int attr_dim = grammar_.attribute_dim();
    std::vector<T> onehot(static_cast<std::size_t>(attr_dim), T(0));
    int base = 0;
    for (const auto& slot : grammar_.slots) {
        const auto& values = grammar_.vocab.at(slot);
        auto it = attributes.find(slot);
        if (it != attributes.end()) {
            auto vit = std::find(values.begin(), values.end(), it->second);
            if (vit == values.end())
                throw ValidationError("encode_frame: unknown value '" + it->second + "' for slot " + slot);
            onehot[static_cast<std::size_t>(base + (vit - values.begin()))] = T(1);
        }
        base += static_cast<int>(values.size());
    }
    // onehot . projection -> [d]
    std::vector<T> out(static_cast<std::size_t>(cfg_.d), T(0));
    const auto& proj = projection_.data();
    for (int a = 0; a < attr_dim; ++a) {
        if (onehot[static_cast<std::size_t>(a)] == T(0)) continue;
        for (int j = 0; j < cfg_.d; ++j)
            out[static_cast<std::size_t>(j)] += proj[static_cast<std::size_t>(a) * cfg_.d + j];
    }
    return Tensor<T>({cfg_.d}, std::move(out));
}

template <typename T>
VisualFeatureMap<T> FeatureProvider<T>::encode_frame(const SceneRecord& frame) const {
    VisualFeatureMap<T> out;
    out.height = cfg_.map_h;
    out.width = cfg_.map_w;
    out.dim = cfg_.d;
    if (mode_ == ProviderMode::precomputed) {
        const std::string key = frame.sequence_id + "/" + std::to_string(frame.frame_id) + "/visual";
        out.features = load_precomputed<T>(*precomputed_, key);
        if (out.features.rank() != 3 || out.features.dim(2) != cfg_.d)
            throw IoError("precomputed visual features for " + key + " do not match configured d");
        out.height = out.features.dim(0);
        out.width = out.features.dim(1);
        return out;
    }
    const int h = cfg_.map_h, w = cfg_.map_w, d = cfg_.d;
    std::vector<T> map(static_cast<std::size_t>(h) * w * d, T(0));
    for (const auto& obj : frame.gt_objects) {
        const Tensor<T> vec = project_attributes(obj.attributes);
        const auto& v = vec.data();
        for (int r = 0; r < h; ++r) {
            const double cy = (r + 0.5) / h;
            if (cy < obj.box.y1() || cy > obj.box.y2()) continue;
            for (int c = 0; c < w; ++c) {
                const double cx = (c + 0.5) / w;
                if (cx < obj.box.x1() || cx > obj.box.x2()) continue;
                T* cell = map.data() + (static_cast<std::size_t>(r) * w + c) * d;
                for (int j = 0; j < d; ++j) cell[j] += v[static_cast<std::size_t>(j)];
            }
        }
    }
    if (cfg_.noise_sigma > 0.0) {
        Rng rng = Rng::derive(cfg_.seed, "frame_noise." + frame.sequence_id,
                              static_cast<std::uint64_t>(frame.frame_id));
        for (auto& x : map) x += static_cast<T>(rng.gaussian() * cfg_.noise_sigma);
    }
    out.features = Tensor<T>({h, w, d}, std::move(map));
    return out;
}

template <typename T>
TextEmbedding<T> FeatureProvider<T>::encode_text(const std::string& text) const {
    return coal::encode_text(text, table_);
}

template <typename T>
Tensor<T> load_precomputed(const TensorContainer& container, const std::string& key) {
    return container.get_tensor<T>(key);
}

template class EmbeddingTable<float>;
template class EmbeddingTable<double>;
template class FeatureProvider<float>;
template class FeatureProvider<double>;
template TextEmbedding<float> encode_text<float>(const std::string&, const EmbeddingTable<float>&);
template TextEmbedding<double> encode_text<double>(const std::string&, const EmbeddingTable<double>&);
template Tensor<float> load_precomputed<float>(const TensorContainer&, const std::string&);
template Tensor<double> load_precomputed<double>(const TensorContainer&, const std::string&);

}  // namespace coal
