// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "coal/encoders.hpp"
#include "coal/matching.hpp"
#include "coal/optim.hpp"
#include "coal/tensor_ops.hpp"

namespace coal {

struct ModelConfig {
    int d = 32;
    int heads = 8;
    int levels = 4;
    int deform_points = 4;  // sampling offsets per head per level
    int bifusion_layers = 1;
    bool esi_enabled = true;  // false zeroes the caption stream
};

template <typename T>
struct BiFusionLayerParams {
    MhcaParams<T> vis;  // map attends to referring words
    MhcaParams<T> txt;  // referring words attend to the map

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        vis.visit(prefix + ".vis", f);
        txt.visit(prefix + ".txt", f);
    }
};

template <typename T>
struct DeformParams {
    LinearParams<T> offset_head;  // d -> levels*heads*points*3 (dx, dy, logit)
    LinearParams<T> value_proj;
    LinearParams<T> out_proj;

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        offset_head.visit(prefix + ".offset_head", f);
        value_proj.visit(prefix + ".value_proj", f);
        out_proj.visit(prefix + ".out_proj", f);
    }
};

template <typename T>
struct HmsiParams {
    std::vector<BiFusionLayerParams<T>> bifusion;
    std::vector<LinearParams<T>> pyramid_proj;
    DeformParams<T> deform;
    MhcaParams<T> refer_agg;
    MhcaParams<T> caption_filter;
    MhcaParams<T> caption_agg;
    LinearParams<T> fuse;

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < bifusion.size(); ++i)
            bifusion[i].visit(prefix + ".bifusion." + std::to_string(i), f);
        for (std::size_t i = 0; i < pyramid_proj.size(); ++i)
            pyramid_proj[i].visit(prefix + ".pyramid." + std::to_string(i), f);
        deform.visit(prefix + ".deform", f);
        refer_agg.visit(prefix + ".refer_agg", f);
        caption_filter.visit(prefix + ".caption_filter", f);
        caption_agg.visit(prefix + ".caption_agg", f);
        fuse.visit(prefix + ".fuse", f);
    }
};

template <typename T>
struct HmsiModel {
    ModelConfig config;
    HmsiParams<T> params;

    static HmsiModel init(const ModelConfig& config, std::uint64_t seed);
    ParamRefs<T> param_refs();
};

template <typename T>
struct GroundedFeatures {
    Tensor<T> visual;  // [H*W, d]
    Tensor<T> words;   // [L, d]
};

template <typename T>
using Pyramid = std::vector<Tensor<T>>;  // [H_l, W_l, d] per level

template <typename T>
struct ObjectStreams {
    Tensor<T> visual;         // O_v  [1,d]
    Tensor<T> caption;        // O_c  [1,d]
    Tensor<T> positional;     // O_p  [1,d]
    Tensor<T> fused_visual;   // O_v + O_p
    Tensor<T> fused_caption;  // O_c + O_p
    Tensor<T> holistic;       // F_o  [1,d]
};

// Symmetric single-layer cross-modal exchange; both directions read the
// pre-update inputs.
template <typename T>
GroundedFeatures<T> bi_fusion(const Tensor<T>& visual_flat, const Tensor<T>& words,
                              const std::vector<BiFusionLayerParams<T>>& layers, int heads);

// Level 0 is the input; each next level 2x2 ceil average pooling; every level
// passes its own linear projection. Errors when ceil-halving stalls before
// the last level.
template <typename T>
Pyramid<T> build_pyramid(const Tensor<T>& grounded_map,
                         const std::vector<LinearParams<T>>& per_level_proj);

template <typename T>
Tensor<T> deform_sample(const Pyramid<T>& pyramid, const Box& box, const DeformParams<T>& params,
                        int heads, int points);

template <typename T>
Tensor<T> refer_aggregate(const Tensor<T>& sentence, const Tensor<T>& words,
                          const Tensor<T>& words_vl, const MhcaParams<T>& params, int heads);

template <typename T>
Tensor<T> caption_filter(const Tensor<T>& caption_words, const Tensor<T>& refer_words,
                         const Tensor<T>& refer_words_vl, const MhcaParams<T>& params, int heads);

template <typename T>
Tensor<T> caption_aggregate(const Tensor<T>& caption_sentence, const Tensor<T>& caption_words,
                            const Tensor<T>& caption_words_vl, const MhcaParams<T>& params,
                            int heads);

// Interleaved sin/cos of (cx, cy, w, h), d/4 dims per coordinate,
// temperature 10000. Constant w.r.t. the tape.
template <typename T>
Tensor<T> pos_embed(const Box& box, int d);

template <typename T>
Tensor<T> holistic_project(const Tensor<T>& visual, const Tensor<T>& caption,
                           const Tensor<T>& positional, const LinearParams<T>& fuse);

template <typename T>
struct FrameInputs {
    Tensor<T> visual;                        // [H,W,d], constant
    std::vector<Box> boxes;                  // N proposal boxes
    std::vector<TextEmbedding<T>> captions;  // N proposal captions
};

template <typename T>
struct FrameForward {
    GroundedFeatures<T> grounded;
    Tensor<T> referring;                  // F_r [1,d]
    std::vector<int> proposal_indices;    // which proposals were scored
    std::vector<ObjectStreams<T>> streams;
    std::vector<Tensor<T>> scores;        // scalar per scored proposal
};

// Full per-frame pipeline; `subset` restricts scoring to those proposal
// indices (masked counterfactual columns never run). Empty frames yield an
// empty score list.
template <typename T>
FrameForward<T> forward_frame(const HmsiModel<T>& model, const FrameInputs<T>& frame,
                              const TextEmbedding<T>& referring,
                              const std::vector<int>* subset = nullptr);

template <typename T>
std::vector<Tensor<T>> forward_scores(const HmsiModel<T>& model, const FrameInputs<T>& frame,
                                      const TextEmbedding<T>& referring,
                                      const std::vector<int>* subset = nullptr);

}  // namespace coal
