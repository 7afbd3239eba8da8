// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/training.hpp"

#include <algorithm>
#include <cmath>

#include "coal/container.hpp"

namespace coal {

namespace {

template <typename T>
struct FrameCache {
    FrameInputs<T> inputs;
    std::map<int, int> label_map;  // proposal -> object id
    bool empty = false;
};

template <typename T>
FrameCache<T> build_frame_cache(const SceneRecord& frame, const FeatureProvider<T>& provider,
                                double label_iou_threshold, bool need_captions) {
    FrameCache<T> cache;
    if (frame.proposals.empty()) {
        cache.empty = true;
        return cache;
    }
    const VisualFeatureMap<T> map = provider.encode_frame(frame);
    cache.inputs.visual = map.features;
    std::vector<Box> boxes;
    for (const auto& p : frame.proposals) {
        boxes.push_back(p.box);
        if (need_captions) cache.inputs.captions.push_back(provider.encode_text(p.caption));
    }
    cache.inputs.boxes = boxes;
    std::vector<std::pair<int, Box>> gt;
    for (const auto& o : frame.gt_objects) gt.emplace_back(o.object_id, o.box);
    cache.label_map = assign_labels(boxes, gt, label_iou_threshold);
    return cache;
}

template <typename T>
double grad_global_norm(const GradMap<T>& grads) {
    double acc = 0.0;
    for (const auto& [name, g] : grads) {
        (void)name;
        for (T x : g.data()) acc += static_cast<double>(x) * static_cast<double>(x);
    }
    return std::sqrt(acc);
}

template <typename T>
void clip_grads(GradMap<T>& grads, double max_norm) {
    const double norm = grad_global_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& [name, g] : grads) {
        (void)name;
        for (auto& x : g.mutable_data()) x *= factor;
    }
}

}  // namespace

template <typename T>
TrainState<T> init_train_state(const TrainConfig& config) {
    if (config.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (config.n_queries < 1) throw std::invalid_argument("train: n_queries must be >= 1");
    TrainState<T> state;
    state.config = config;
    state.config.model.esi_enabled = config.esi_enabled;
    state.config.encoder.d = config.model.d;
    state.model = HmsiModel<T>::init(state.config.model, config.seed);
    state.epoch = 0;
    return state;
}

template <typename T>
std::vector<EpochLog> train(TrainState<T>& state, const Dataset& dataset, int target_epochs,
                            const std::function<void(const EpochLog&)>& on_epoch) {
    const TrainConfig& cfg = state.config;
    FeatureProvider<T> provider(dataset.grammar, cfg.encoder);
    AdamWConfig adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.weight_decay = cfg.weight_decay;

    // (sequence, frame) work list in dataset order; shuffled per epoch
    std::vector<std::pair<int, int>> frame_refs;
    for (std::size_t s = 0; s < dataset.sequences.size(); ++s)
        for (std::size_t f = 0; f < dataset.sequences[s].frames.size(); ++f)
            frame_refs.emplace_back(static_cast<int>(s), static_cast<int>(f));

    // frame features, captions and label assignment are constant across
    // epochs; built lazily on first touch
    std::map<std::pair<int, int>, FrameCache<T>> cache;

    ParamRefs<T> refs = state.model.param_refs();
    std::vector<EpochLog> logs;
    for (int epoch = state.epoch; epoch < target_epochs; ++epoch) {
        std::vector<std::pair<int, int>> order = frame_refs;
        Rng order_rng = Rng::derive(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)), "order");
        order_rng.shuffle(order);

        EpochLog log;
        log.epoch = epoch + 1;
        for (const auto& [si, fi] : order) {
            const SequenceData& seq = dataset.sequences[static_cast<std::size_t>(si)];
            const SceneRecord& frame = seq.frames[static_cast<std::size_t>(fi)];
            auto cit = cache.find({si, fi});
            if (cit == cache.end())
                cit = cache.emplace(std::make_pair(si, fi),
                                    build_frame_cache(frame, provider, cfg.label_iou_threshold,
                                                      cfg.esi_enabled))
                          .first;
            const FrameCache<T>& fc = cit->second;
            if (fc.empty || seq.expressions.empty()) {
                ++log.skipped;
                continue;
            }

            Rng frame_rng = Rng::derive(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)),
                                        "frame." + seq.sequence_id,
                                        static_cast<std::uint64_t>(frame.frame_id));
            std::vector<int> expr_idx(seq.expressions.size());
            for (std::size_t i = 0; i < expr_idx.size(); ++i) expr_idx[i] = static_cast<int>(i);
            frame_rng.shuffle(expr_idx);
            const int k = std::min<int>(cfg.n_queries, static_cast<int>(expr_idx.size()));
            std::vector<const Expression*> exprs;
            std::vector<CounterfactualQuery> cfs;
            for (int i = 0; i < k; ++i) {
                const Expression& e = seq.expressions[static_cast<std::size_t>(expr_idx[static_cast<std::size_t>(i)])];
                exprs.push_back(&e);
                // fresh counterfactual per epoch: the stochastic hard-negative miner
                cfs.push_back(perturb_expression(e.text, e.attributes, e.id, dataset.grammar, frame_rng));
            }
            const QueryBatchPlan plan = build_query_batch(frame, exprs, cfs, fc.label_map);

            Tape<T> tape;
            bind_params(tape, refs);
            LossBreakdown<T> loss =
                frame_objective(state.model, fc.inputs, provider, plan, cfg.cf_enabled);
            const double total_value = static_cast<double>(loss.total.value());
            if (!std::isfinite(total_value))
                throw NumericError("train: non-finite loss at " + seq.sequence_id + " frame " +
                                   std::to_string(frame.frame_id));
            GradMap<T> grads = backward(tape, loss.total, refs);
            if (cfg.grad_clip > 0.0) clip_grads(grads, cfg.grad_clip);
            adamw_step(refs, grads, state.opt, adam);

            log.main += static_cast<double>(loss.main.value());
            log.cf += static_cast<double>(loss.counterfactual.value());
            log.total += total_value;
            ++log.frames;
        }
        if (log.frames > 0) {
            log.main /= log.frames;
            log.cf /= log.frames;
            log.total /= log.frames;
        }
        state.epoch = epoch + 1;
        if (on_epoch) on_epoch(log);
        logs.push_back(log);
    }
    return logs;
}

template <typename T>
void save_checkpoint(const TrainState<T>& state, const std::string& path) {
    TensorContainer c;
    c.put_value("meta.dtype", static_cast<double>(dtype_code<T>()));
    c.put_value("meta.epoch", static_cast<double>(state.epoch));
    c.put_value("meta.adam_step", static_cast<double>(state.opt.step));
    const TrainConfig& cfg = state.config;
    c.put_value("meta.model.d", cfg.model.d);
    c.put_value("meta.model.heads", cfg.model.heads);
    c.put_value("meta.model.levels", cfg.model.levels);
    c.put_value("meta.model.deform_points", cfg.model.deform_points);
    c.put_value("meta.model.bifusion_layers", cfg.model.bifusion_layers);
    c.put_value("meta.model.esi_enabled", cfg.esi_enabled ? 1.0 : 0.0);
    c.put_value("meta.encoder.map_h", cfg.encoder.map_h);
    c.put_value("meta.encoder.map_w", cfg.encoder.map_w);
    c.put_value("meta.encoder.noise_sigma", cfg.encoder.noise_sigma);
    c.put_value("meta.encoder.seed", static_cast<double>(cfg.encoder.seed));
    c.put_value("meta.train.seed", static_cast<double>(cfg.seed));
    c.put_value("meta.train.lr", cfg.lr);
    c.put_value("meta.train.n_queries", cfg.n_queries);
    c.put_value("meta.train.cf_enabled", cfg.cf_enabled ? 1.0 : 0.0);
    c.put_value("meta.train.beta1", cfg.beta1);
    c.put_value("meta.train.beta2", cfg.beta2);
    c.put_value("meta.train.weight_decay", cfg.weight_decay);
    c.put_value("meta.train.grad_clip", cfg.grad_clip);
    c.put_value("meta.train.label_iou_threshold", cfg.label_iou_threshold);
    c.put_value("meta.init.uniform_fan_in", 1.0);
    c.put_value("meta.threads", 1.0);

    // visit() takes mutable refs; reads only here
    auto& model = const_cast<HmsiModel<T>&>(state.model);
    model.params.visit("hmsi", [&c](const std::string& name, Tensor<T>& t) {
        c.put("param." + name, t);
    });
    model.params.visit("hmsi", [&c, &state](const std::string& name, Tensor<T>& t) {
        auto mit = state.opt.m.find(name);
        if (mit != state.opt.m.end()) {
            c.put("adam.m." + name, mit->second);
            c.put("adam.v." + name, state.opt.v.at(name));
        } else {
            c.put("adam.m." + name, Tensor<T>::zeros(t.shape()));
            c.put("adam.v." + name, Tensor<T>::zeros(t.shape()));
        }
    });
    c.save(path);
}

std::uint32_t checkpoint_dtype(const std::string& path) {
    const TensorContainer c = TensorContainer::load(path);
    return static_cast<std::uint32_t>(c.get_value("meta.dtype"));
}

template <typename T>
TrainState<T> load_checkpoint(const std::string& path) {
    const TensorContainer c = TensorContainer::load(path);
    if (static_cast<std::uint32_t>(c.get_value("meta.dtype")) != dtype_code<T>())
        throw IoError("checkpoint " + path + ": dtype does not match requested precision");
    TrainConfig cfg;
    cfg.model.d = static_cast<int>(c.get_value("meta.model.d"));
    cfg.model.heads = static_cast<int>(c.get_value("meta.model.heads"));
    cfg.model.levels = static_cast<int>(c.get_value("meta.model.levels"));
    cfg.model.deform_points = static_cast<int>(c.get_value("meta.model.deform_points"));
    cfg.model.bifusion_layers = static_cast<int>(c.get_value("meta.model.bifusion_layers"));
    cfg.esi_enabled = c.get_value("meta.model.esi_enabled") != 0.0;
    cfg.model.esi_enabled = cfg.esi_enabled;
    cfg.encoder.d = cfg.model.d;
    cfg.encoder.map_h = static_cast<int>(c.get_value("meta.encoder.map_h"));
    cfg.encoder.map_w = static_cast<int>(c.get_value("meta.encoder.map_w"));
    cfg.encoder.noise_sigma = c.get_value("meta.encoder.noise_sigma");
    cfg.encoder.seed = static_cast<std::uint64_t>(c.get_value("meta.encoder.seed"));
    cfg.seed = static_cast<std::uint64_t>(c.get_value("meta.train.seed"));
    cfg.lr = c.get_value("meta.train.lr");
    cfg.n_queries = static_cast<int>(c.get_value("meta.train.n_queries"));
    cfg.cf_enabled = c.get_value("meta.train.cf_enabled") != 0.0;
    cfg.beta1 = c.get_value("meta.train.beta1");
    cfg.beta2 = c.get_value("meta.train.beta2");
    cfg.weight_decay = c.get_value("meta.train.weight_decay");
    cfg.grad_clip = c.get_value("meta.train.grad_clip");
    cfg.label_iou_threshold = c.get_value("meta.train.label_iou_threshold");
    cfg.precision = dtype_code<T>() == 0 ? "f32" : "f64";

    TrainState<T> state;
    state.config = cfg;
    state.model = HmsiModel<T>::init(cfg.model, cfg.seed);
    state.epoch = static_cast<int>(c.get_value("meta.epoch"));
    state.opt.step = static_cast<std::int64_t>(c.get_value("meta.adam_step"));
    state.model.params.visit("hmsi", [&](const std::string& name, Tensor<T>& t) {
        Tensor<T> stored = c.get_tensor<T>("param." + name);
        if (stored.shape() != t.shape())
            throw IoError("checkpoint " + path + ": shape mismatch for " + name);
        t = stored;
        if (state.opt.step > 0) {
            state.opt.m[name] = c.get_tensor<T>("adam.m." + name);
            state.opt.v[name] = c.get_tensor<T>("adam.v." + name);
        }
    });
    return state;
}

template <typename T>
GroundingReport evaluate_grounding(const HmsiModel<T>& model, const FeatureProvider<T>& provider,
                                   const Dataset& dataset, double label_iou_threshold) {
    GroundingReport report;
    double pos_sum = 0.0, neg_sum = 0.0, cf_sum = 0.0;
    int cf_count = 0;
    for (const auto& seq : dataset.sequences) {
        for (const auto& frame : seq.frames) {
            if (frame.proposals.empty()) continue;
            const FrameCache<T> fc =
                build_frame_cache(frame, provider, label_iou_threshold, model.config.esi_enabled);
            for (const auto& expr : seq.expressions) {
                const TextEmbedding<T> query = provider.encode_text(expr.text);
                std::vector<Tensor<T>> scores = forward_scores(model, fc.inputs, query);
                const auto pos_it = frame.positives.find(expr.id);
                const std::set<int> empty;
                const std::set<int>& positives =
                    pos_it != frame.positives.end() ? pos_it->second : empty;
                std::vector<int> targets;
                for (std::size_t p = 0; p < scores.size(); ++p) {
                    auto mit = fc.label_map.find(static_cast<int>(p));
                    const bool is_pos = mit != fc.label_map.end() && positives.count(mit->second) > 0;
                    const double prob =
                        (static_cast<double>(scores[p].value()) + 1.0) / 2.0;
                    if (is_pos) {
                        targets.push_back(static_cast<int>(p));
                        ++report.positive_total;
                        if (prob > 0.5) ++report.positive_correct;
                        pos_sum += prob;
                    } else {
                        ++report.negative_total;
                        if (prob < 0.5) ++report.negative_correct;
                        neg_sum += prob;
                    }
                }
                if (targets.empty()) continue;
                auto cf_it = seq.counterfactuals.find(expr.id);
                if (cf_it == seq.counterfactuals.end() || cf_it->second.empty()) continue;
                const TextEmbedding<T> cf_query = provider.encode_text(cf_it->second.front().text);
                std::vector<Tensor<T>> cf_scores = forward_scores(model, fc.inputs, cf_query, &targets);
                double true_mean = 0.0, cf_mean = 0.0;
                for (std::size_t i = 0; i < targets.size(); ++i) {
                    true_mean += (static_cast<double>(scores[static_cast<std::size_t>(targets[i])].value()) + 1.0) / 2.0;
                    const double cp = (static_cast<double>(cf_scores[i].value()) + 1.0) / 2.0;
                    cf_mean += cp;
                    cf_sum += cp;
                    ++cf_count;
                }
                true_mean /= static_cast<double>(targets.size());
                cf_mean /= static_cast<double>(targets.size());
                ++report.cf_pairs;
                if (true_mean > cf_mean) ++report.cf_true_above;
            }
        }
    }
    if (report.positive_total) report.mean_positive_p = pos_sum / report.positive_total;
    if (report.negative_total) report.mean_negative_p = neg_sum / report.negative_total;
    if (cf_count) report.mean_cf_p = cf_sum / cf_count;
    return report;
}

#define COAL_INSTANTIATE_TRAINING(T)                                                           \
    template TrainState<T> init_train_state<T>(const TrainConfig&);                            \
    template std::vector<EpochLog> train<T>(TrainState<T>&, const Dataset&, int,               \
                                            const std::function<void(const EpochLog&)>&);      \
    template void save_checkpoint<T>(const TrainState<T>&, const std::string&);                \
    template TrainState<T> load_checkpoint<T>(const std::string&);                             \
    template GroundingReport evaluate_grounding<T>(const HmsiModel<T>&, const FeatureProvider<T>&, \
                                                   const Dataset&, double);

COAL_INSTANTIATE_TRAINING(float)
COAL_INSTANTIATE_TRAINING(double)

#undef COAL_INSTANTIATE_TRAINING

}  // namespace coal
