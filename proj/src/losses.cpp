// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/losses.hpp"

#include <algorithm>

namespace coal {

template <typename T>
Tensor<T> to_probability(const Tensor<T>& cosine_score) {
    return clamp(add_scalar(scale(cosine_score, T(0.5)), T(0.5)), static_cast<T>(kProbEps),
                 T(1) - static_cast<T>(kProbEps));
}

template <typename T>
Tensor<T> main_loss(const std::vector<Tensor<T>>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size())
        throw std::invalid_argument("main_loss: probs/labels length mismatch");
    if (probs.empty()) throw std::invalid_argument("main_loss: no proposals");
    Tensor<T> acc;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        Tensor<T> term;
        if (labels[i] == 1) {
            term = scale(log(probs[i]), T(-1));
        } else {
            term = scale(log(add_scalar(scale(probs[i], T(-1)), T(1))), T(-1));
        }
        acc = i == 0 ? std::move(term) : add(acc, term);
    }
    return scale(acc, T(1) / static_cast<T>(probs.size()));
}

template <typename T>
Tensor<T> cf_loss(const std::vector<Tensor<T>>& target_probs) {
    if (target_probs.empty()) throw std::invalid_argument("cf_loss: no target probabilities");
    Tensor<T> acc;
    for (std::size_t i = 0; i < target_probs.size(); ++i) {
        Tensor<T> term = scale(log(add_scalar(scale(target_probs[i], T(-1)), T(1))), T(-1));
        acc = i == 0 ? std::move(term) : add(acc, term);
    }
    return scale(acc, T(1) / static_cast<T>(target_probs.size()));
}

std::map<int, int> assign_labels(const std::vector<Box>& proposals,
                                 const std::vector<std::pair<int, Box>>& gt, double iou_threshold) {
    if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
        throw std::invalid_argument("assign_labels: threshold must lie in (0,1)");
    std::map<int, int> out;
    if (proposals.empty() || gt.empty()) return out;
    CostMatrix costs(static_cast<int>(proposals.size()), static_cast<int>(gt.size()));
    for (std::size_t p = 0; p < proposals.size(); ++p)
        for (std::size_t g = 0; g < gt.size(); ++g)
            costs.at(static_cast<int>(p), static_cast<int>(g)) = iou(proposals[p], gt[g].second);
    const AssignmentResult res = linear_assignment(costs, /*maximize=*/true);
    for (const auto& [p, g] : res.pairs)
        if (costs.at(p, g) >= iou_threshold) out[p] = gt[static_cast<std::size_t>(g)].first;
    return out;
}

QueryBatchPlan build_query_batch(const SceneRecord& frame,
                                 const std::vector<const Expression*>& expressions,
                                 const std::vector<CounterfactualQuery>& counterfactuals,
                                 const std::map<int, int>& label_map) {
    if (expressions.size() != counterfactuals.size())
        throw std::invalid_argument("build_query_batch: expression/counterfactual count mismatch");
    const int n = static_cast<int>(expressions.size());
    const int n_props = static_cast<int>(frame.proposals.size());
    QueryBatchPlan plan;
    plan.labels = LabelMatrix(n_props, n);
    plan.cf_targets.resize(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) {
        const Expression* expr = expressions[static_cast<std::size_t>(q)];
        const auto& cf = counterfactuals[static_cast<std::size_t>(q)];
        if (cf.source_expression_id != expr->id)
            throw std::invalid_argument("build_query_batch: counterfactual " + std::to_string(q) +
                                        " does not derive from expression " + expr->id);
        plan.expression_ids.push_back(expr->id);
        plan.positive_texts.push_back(expr->text);
        plan.counterfactuals.push_back(cf);

        const auto pos_it = frame.positives.find(expr->id);
        const std::set<int> empty;
        const std::set<int>& positive_objects = pos_it != frame.positives.end() ? pos_it->second : empty;
        for (int p = 0; p < n_props; ++p) {
            auto mit = label_map.find(p);
            const bool is_target = mit != label_map.end() && positive_objects.count(mit->second) > 0;
            plan.labels.set(p, q, is_target ? Label::positive : Label::negative);
            if (is_target) {
                plan.labels.set(p, n + q, Label::negative);  // inverted to 0 under the counterfactual
                plan.cf_targets[static_cast<std::size_t>(q)].push_back(p);
            } else {
                plan.labels.set(p, n + q, Label::masked);
            }
        }
    }
    return plan;
}

template <typename T>
LossBreakdown<T> frame_objective(const HmsiModel<T>& model, const FrameInputs<T>& frame,
                                 const FeatureProvider<T>& provider, const QueryBatchPlan& plan,
                                 bool cf_enabled, bool full_cf_forward) {
    const int n = static_cast<int>(plan.positive_texts.size());
    const int n_props = static_cast<int>(frame.boxes.size());
    if (n_props == 0 || n == 0)
        throw std::invalid_argument("frame_objective: empty frame or empty query batch");

    LossBreakdown<T> out;
    Tensor<T> main_acc;
    for (int q = 0; q < n; ++q) {
        const TextEmbedding<T> query = provider.encode_text(plan.positive_texts[static_cast<std::size_t>(q)]);
        std::vector<Tensor<T>> scores = forward_scores(model, frame, query);
        std::vector<Tensor<T>> probs;
        std::vector<int> labels;
        probs.reserve(scores.size());
        for (int p = 0; p < n_props; ++p) {
            probs.push_back(to_probability(scores[static_cast<std::size_t>(p)]));
            labels.push_back(plan.labels.at(p, q) == Label::positive ? 1 : 0);
        }
        Tensor<T> column = main_loss(probs, labels);
        main_acc = q == 0 ? std::move(column) : add(main_acc, column);
        out.main_terms += 1;
    }
    out.main = scale(main_acc, T(1) / static_cast<T>(out.main_terms));

    Tensor<T> cf_acc;
    if (cf_enabled) {
        for (int q = 0; q < n; ++q) {
            const auto& targets = plan.cf_targets[static_cast<std::size_t>(q)];
            if (targets.empty()) continue;  // no visible target: term skipped
            const TextEmbedding<T> query =
                provider.encode_text(plan.counterfactuals[static_cast<std::size_t>(q)].text);
            std::vector<Tensor<T>> scores;
            if (full_cf_forward) {
                // scores every proposal; only the target terms feed the loss
                std::vector<Tensor<T>> all = forward_scores(model, frame, query);
                for (int p : targets) scores.push_back(all[static_cast<std::size_t>(p)]);
            } else {
                scores = forward_scores(model, frame, query, &targets);
            }
            std::vector<Tensor<T>> probs;
            for (auto& s : scores) probs.push_back(to_probability(s));
            Tensor<T> column = cf_loss(probs);
            cf_acc = out.cf_terms == 0 ? std::move(column) : add(cf_acc, column);
            out.cf_terms += 1;
        }
    }
    if (out.cf_terms > 0) {
        out.counterfactual = scale(cf_acc, T(1) / static_cast<T>(out.cf_terms));
        out.total = add(out.main, out.counterfactual);
    } else {
        out.counterfactual = Tensor<T>::zeros({1});
        out.total = out.main;
    }
    return out;
}

#define COAL_INSTANTIATE_LOSSES(T)                                                               \
    template Tensor<T> to_probability<T>(const Tensor<T>&);                                      \
    template Tensor<T> main_loss<T>(const std::vector<Tensor<T>>&, const std::vector<int>&);     \
    template Tensor<T> cf_loss<T>(const std::vector<Tensor<T>>&);                                \
    template LossBreakdown<T> frame_objective<T>(const HmsiModel<T>&, const FrameInputs<T>&,     \
                                                 const FeatureProvider<T>&, const QueryBatchPlan&, \
                                                 bool, bool);

COAL_INSTANTIATE_LOSSES(float)
COAL_INSTANTIATE_LOSSES(double)

#undef COAL_INSTANTIATE_LOSSES

}  // namespace coal
