// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/hmsi.hpp"

#include <cmath>

namespace coal {

template <typename T>
HmsiModel<T> HmsiModel<T>::init(const ModelConfig& config, std::uint64_t seed) {
    if (config.d % config.heads != 0)
        throw std::invalid_argument("hmsi: d not divisible by heads");
    if (config.d % 8 != 0) throw std::invalid_argument("hmsi: d must be divisible by 8");
    HmsiModel<T> model;
    model.config = config;
    model.params.bifusion.resize(static_cast<std::size_t>(config.bifusion_layers));
    model.params.pyramid_proj.resize(static_cast<std::size_t>(config.levels));
    const int d = config.d;
    // per-name derived streams: initialization is a pure function of
    // (seed, parameter name), independent of construction order
    auto init_named_linear = [&](LinearParams<T>& p, const std::string& name, int in, int out) {
        Rng rng = Rng::derive(seed, "init." + name);
        init_linear(p, in, out, rng);
    };
    auto init_named_mhca = [&](MhcaParams<T>& m, const std::string& bname) {
        init_named_linear(m.q_proj, bname + ".q_proj", d, d);
        init_named_linear(m.k_proj, bname + ".k_proj", d, d);
        init_named_linear(m.v_proj, bname + ".v_proj", d, d);
        init_named_linear(m.out_proj, bname + ".out_proj", d, d);
    };
    for (std::size_t i = 0; i < model.params.bifusion.size(); ++i) {
        const std::string base = "hmsi.bifusion." + std::to_string(i);
        init_named_mhca(model.params.bifusion[i].vis, base + ".vis");
        init_named_mhca(model.params.bifusion[i].txt, base + ".txt");
    }
    for (std::size_t i = 0; i < model.params.pyramid_proj.size(); ++i)
        init_named_linear(model.params.pyramid_proj[i], "hmsi.pyramid." + std::to_string(i), d, d);
    const int offset_out = config.levels * config.heads * config.deform_points * 3;
    init_named_linear(model.params.deform.offset_head, "hmsi.deform.offset_head", d, offset_out);
    init_named_linear(model.params.deform.value_proj, "hmsi.deform.value_proj", d, d);
    init_named_linear(model.params.deform.out_proj, "hmsi.deform.out_proj", d, d);
    init_named_mhca(model.params.refer_agg, "hmsi.refer_agg");
    init_named_mhca(model.params.caption_filter, "hmsi.caption_filter");
    init_named_mhca(model.params.caption_agg, "hmsi.caption_agg");
    init_named_linear(model.params.fuse, "hmsi.fuse", d, d);
    return model;
}

template <typename T>
ParamRefs<T> HmsiModel<T>::param_refs() {
    ParamRefs<T> refs;
    params.visit("hmsi", [&refs](const std::string& name, Tensor<T>& t) {
        refs.push_back({name, &t, false});
    });
    return refs;
}

template <typename T>
GroundedFeatures<T> bi_fusion(const Tensor<T>& visual_flat, const Tensor<T>& words,
                              const std::vector<BiFusionLayerParams<T>>& layers, int heads) {
    if (visual_flat.dim(1) != words.dim(1))
        throw std::invalid_argument("bi_fusion: dimension mismatch");
    GroundedFeatures<T> out{visual_flat, words};
    for (const auto& layer : layers) {
        Tensor<T> v_new =
            add(out.visual, multi_head_cross_attention(out.visual, out.words, out.words, layer.vis, heads));
        Tensor<T> w_new =
            add(out.words, multi_head_cross_attention(out.words, out.visual, out.visual, layer.txt, heads));
        out.visual = std::move(v_new);
        out.words = std::move(w_new);
    }
    return out;
}

template <typename T>
Pyramid<T> build_pyramid(const Tensor<T>& grounded_map,
                         const std::vector<LinearParams<T>>& per_level_proj) {
    if (grounded_map.rank() != 3) throw std::invalid_argument("build_pyramid: [H,W,d] map expected");
    const int levels = static_cast<int>(per_level_proj.size());
    // every pooling step must actually shrink the map, otherwise the level
    // schedule degenerates
    {
        int h = grounded_map.dim(0), w = grounded_map.dim(1);
        for (int l = 1; l < levels; ++l) {
            const int nh = (h + 1) / 2, nw = (w + 1) / 2;
            if (nh == h && nw == w)
                throw std::invalid_argument("build_pyramid: map too small for " +
                                            std::to_string(levels) + " levels");
            h = nh;
            w = nw;
        }
    }
    Pyramid<T> pyr;
    Tensor<T> cur = grounded_map;
    for (int l = 0; l < levels; ++l) {
        if (l > 0) cur = avg_pool2(cur);
        const int h = cur.dim(0), w = cur.dim(1), d = cur.dim(2);
        Tensor<T> projected = linear(cur.reshaped({h * w, d}), per_level_proj[static_cast<std::size_t>(l)]);
        pyr.push_back(projected.reshaped({h, w, d}));
    }
    return pyr;
}

template <typename T>
Tensor<T> deform_sample(const Pyramid<T>& pyramid, const Box& box, const DeformParams<T>& params,
                        int heads, int points) {
    const int levels = static_cast<int>(pyramid.size());
    const int d = pyramid[0].dim(2);
    if (d % heads != 0) throw std::invalid_argument("deform_sample: d not divisible by heads");
    const int dh = d / heads;
    const int hk = heads * points;

    const Tensor<T> center({1, 2}, {static_cast<T>(box.cx), static_cast<T>(box.cy)});

    // reference query: mean of the center samples across levels
    Tensor<T> query;
    for (int l = 0; l < levels; ++l) {
        Tensor<T> s = grid_sample(pyramid[static_cast<std::size_t>(l)], center);
        query = l == 0 ? std::move(s) : add(query, s);
    }
    query = scale(query, T(1) / static_cast<T>(levels));

    // per (level, head, point): dx, dy, logit — level-major rows
    Tensor<T> raw = linear(query, params.offset_head).reshaped({levels * hk, 3});

    const std::vector<T> wh_tile = [&] {
        std::vector<T> v(static_cast<std::size_t>(hk) * 2);
        for (int i = 0; i < hk; ++i) {
            v[static_cast<std::size_t>(i) * 2] = static_cast<T>(box.w);
            v[static_cast<std::size_t>(i) * 2 + 1] = static_cast<T>(box.h);
        }
        return v;
    }();
    const std::vector<T> center_tile = [&] {
        std::vector<T> v(static_cast<std::size_t>(hk) * 2);
        for (int i = 0; i < hk; ++i) {
            v[static_cast<std::size_t>(i) * 2] = static_cast<T>(box.cx);
            v[static_cast<std::size_t>(i) * 2 + 1] = static_cast<T>(box.cy);
        }
        return v;
    }();
    const Tensor<T> wh({hk, 2}, wh_tile);
    const Tensor<T> ctr({hk, 2}, center_tile);

    std::vector<Tensor<T>> value_parts, logit_parts;
    for (int l = 0; l < levels; ++l) {
        Tensor<T> block = slice_rows(raw, l * hk, hk);
        Tensor<T> pts = add(mul(slice_cols(block, 0, 2), wh), ctr);
        Tensor<T> sampled = grid_sample(pyramid[static_cast<std::size_t>(l)], pts);  // [hk, d]
        value_parts.push_back(linear(sampled, params.value_proj));
        logit_parts.push_back(slice_cols(block, 2, 1));
    }
    Tensor<T> values = concat_rows(value_parts);  // [levels*hk, d], level-major
    Tensor<T> logits = concat_rows(logit_parts);  // [levels*hk, 1]

    // regroup rows head-major so each head's (level, point) slots are contiguous
    std::vector<int> perm;
    perm.reserve(static_cast<std::size_t>(levels) * hk);
    for (int hd = 0; hd < heads; ++hd)
        for (int l = 0; l < levels; ++l)
            for (int p = 0; p < points; ++p) perm.push_back(l * hk + hd * points + p);
    Tensor<T> values_hm = gather_rows(values, perm);
    Tensor<T> logits_hm = gather_rows(logits, perm).reshaped({heads, levels * points});
    Tensor<T> attn = softmax(logits_hm, 1);

    const int slots = levels * points;
    std::vector<Tensor<T>> head_outs;
    for (int hd = 0; hd < heads; ++hd) {
        Tensor<T> w = slice_rows(attn, hd, 1);                                  // [1, slots]
        Tensor<T> v = slice_cols(slice_rows(values_hm, hd * slots, slots), hd * dh, dh);  // [slots, dh]
        head_outs.push_back(matmul(w, v));                                      // [1, dh]
    }
    return linear(concat_cols(head_outs), params.out_proj);
}

template <typename T>
Tensor<T> refer_aggregate(const Tensor<T>& sentence, const Tensor<T>& words,
                          const Tensor<T>& words_vl, const MhcaParams<T>& params, int heads) {
    Tensor<T> q = sentence.rank() == 1 ? sentence.reshaped({1, sentence.dim(0)}) : sentence;
    return add(q, multi_head_cross_attention(q, words, words_vl, params, heads));
}

template <typename T>
Tensor<T> caption_filter(const Tensor<T>& caption_words, const Tensor<T>& refer_words,
                         const Tensor<T>& refer_words_vl, const MhcaParams<T>& params, int heads) {
    return add(caption_words,
               multi_head_cross_attention(caption_words, refer_words, refer_words_vl, params, heads));
}

template <typename T>
Tensor<T> caption_aggregate(const Tensor<T>& caption_sentence, const Tensor<T>& caption_words,
                            const Tensor<T>& caption_words_vl, const MhcaParams<T>& params,
                            int heads) {
    Tensor<T> q = caption_sentence.rank() == 1
                      ? caption_sentence.reshaped({1, caption_sentence.dim(0)})
                      : caption_sentence;
    return add(q, multi_head_cross_attention(q, caption_words, caption_words_vl, params, heads));
}

template <typename T>
Tensor<T> pos_embed(const Box& box, int d) {
    if (d % 8 != 0) throw std::invalid_argument("pos_embed: d must be divisible by 8");
    const int block = d / 4;
    const int pairs = block / 2;
    const double coords[4] = {box.cx, box.cy, box.w, box.h};
    std::vector<T> v(static_cast<std::size_t>(d));
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < pairs; ++i) {
            const double omega = std::pow(10000.0, -static_cast<double>(i) / pairs);
            const double angle = coords[c] * omega;
            v[static_cast<std::size_t>(c * block + 2 * i)] = static_cast<T>(std::sin(angle));
            v[static_cast<std::size_t>(c * block + 2 * i + 1)] = static_cast<T>(std::cos(angle));
        }
    }
    return Tensor<T>({1, d}, std::move(v));
}

template <typename T>
Tensor<T> holistic_project(const Tensor<T>& visual, const Tensor<T>& caption,
                           const Tensor<T>& positional, const LinearParams<T>& fuse) {
    Tensor<T> fused_visual = add(visual, positional);
    Tensor<T> fused_caption = add(caption, positional);
    return linear(add(fused_visual, fused_caption), fuse);
}

template <typename T>
FrameForward<T> forward_frame(const HmsiModel<T>& model, const FrameInputs<T>& frame,
                              const TextEmbedding<T>& referring, const std::vector<int>* subset) {
    const auto& cfg = model.config;
    FrameForward<T> out;
    const int n = static_cast<int>(frame.boxes.size());
    if (subset) {
        out.proposal_indices = *subset;
        for (int i : out.proposal_indices)
            if (i < 0 || i >= n) throw std::invalid_argument("forward_frame: proposal index out of range");
    } else {
        out.proposal_indices.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) out.proposal_indices[static_cast<std::size_t>(i)] = i;
    }
    if (out.proposal_indices.empty()) return out;

    const int h = frame.visual.dim(0), w = frame.visual.dim(1), d = frame.visual.dim(2);
    if (d != cfg.d) throw std::invalid_argument("forward_frame: feature dimension mismatch");
    const Tensor<T> words = referring.words;
    const Tensor<T> sentence = referring.sentence.reshaped({1, d});

    out.grounded = bi_fusion(frame.visual.reshaped({h * w, d}), words, model.params.bifusion, cfg.heads);
    Pyramid<T> pyramid =
        build_pyramid(out.grounded.visual.reshaped({h, w, d}), model.params.pyramid_proj);
    out.referring = refer_aggregate(sentence, words, out.grounded.words, model.params.refer_agg, cfg.heads);

    const Tensor<T> fr_vec = out.referring.reshaped({d});
    for (int idx : out.proposal_indices) {
        const Box& box = frame.boxes[static_cast<std::size_t>(idx)];
        ObjectStreams<T> s;
        s.visual = deform_sample(pyramid, box, model.params.deform, cfg.heads, cfg.deform_points);
        if (cfg.esi_enabled) {
            const auto& cap = frame.captions.at(static_cast<std::size_t>(idx));
            Tensor<T> cw_vl =
                caption_filter(cap.words, words, out.grounded.words, model.params.caption_filter, cfg.heads);
            s.caption = caption_aggregate(cap.sentence.reshaped({1, d}), cap.words, cw_vl,
                                          model.params.caption_agg, cfg.heads);
        } else {
            s.caption = Tensor<T>::zeros({1, d});
        }
        s.positional = pos_embed<T>(box, d);
        s.fused_visual = add(s.visual, s.positional);
        s.fused_caption = add(s.caption, s.positional);
        s.holistic = linear(add(s.fused_visual, s.fused_caption), model.params.fuse);
        out.scores.push_back(cosine_similarity(s.holistic.reshaped({d}), fr_vec));
        out.streams.push_back(std::move(s));
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> forward_scores(const HmsiModel<T>& model, const FrameInputs<T>& frame,
                                      const TextEmbedding<T>& referring,
                                      const std::vector<int>* subset) {
    return forward_frame(model, frame, referring, subset).scores;
}

#define COAL_INSTANTIATE_HMSI(T)                                                                   \
    template struct HmsiModel<T>;                                                                  \
    template GroundedFeatures<T> bi_fusion<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                              const std::vector<BiFusionLayerParams<T>>&, int);   \
    template Pyramid<T> build_pyramid<T>(const Tensor<T>&, const std::vector<LinearParams<T>>&);   \
    template Tensor<T> deform_sample<T>(const Pyramid<T>&, const Box&, const DeformParams<T>&,    \
                                        int, int);                                                \
    template Tensor<T> refer_aggregate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                          const MhcaParams<T>&, int);                             \
    template Tensor<T> caption_filter<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                         const MhcaParams<T>&, int);                              \
    template Tensor<T> caption_aggregate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                            const MhcaParams<T>&, int);                           \
    template Tensor<T> pos_embed<T>(const Box&, int);                                             \
    template Tensor<T> holistic_project<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                           const LinearParams<T>&);                               \
    template FrameForward<T> forward_frame<T>(const HmsiModel<T>&, const FrameInputs<T>&,         \
                                              const TextEmbedding<T>&, const std::vector<int>*);  \
    template std::vector<Tensor<T>> forward_scores<T>(const HmsiModel<T>&, const FrameInputs<T>&, \
                                                      const TextEmbedding<T>&,                    \
                                                      const std::vector<int>*);

COAL_INSTANTIATE_HMSI(float)
COAL_INSTANTIATE_HMSI(double)

#undef COAL_INSTANTIATE_HMSI

}  // namespace coal
