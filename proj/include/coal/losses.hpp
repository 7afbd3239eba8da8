// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <vector>

#include "coal/hmsi.hpp"

namespace coal {

enum class Label : signed char { negative = 0, positive = 1, masked = 2 };

// [n_proposals x 2N] labels: columns 0..N-1 carry the positive expressions
// (never masked), columns N..2N-1 carry the counterfactuals, where only the
// source expression's targets stay (as 0) and every other proposal is masked.
struct LabelMatrix {
    int n_proposals = 0;
    int n_queries = 0;  // N
    std::vector<Label> entries;

    LabelMatrix() = default;
    LabelMatrix(int proposals, int queries)
        : n_proposals(proposals), n_queries(queries),
          entries(static_cast<std::size_t>(proposals) * (2 * queries), Label::negative) {}

    Label at(int proposal, int column) const {
        return entries[static_cast<std::size_t>(proposal) * (2 * n_queries) + column];
    }
    void set(int proposal, int column, Label l) {
        entries[static_cast<std::size_t>(proposal) * (2 * n_queries) + column] = l;
    }
    int columns() const { return 2 * n_queries; }
};

// P = (S+1)/2, clamped away from {0,1} before any logarithm.
inline constexpr double kProbEps = 1e-7;

template <typename T>
Tensor<T> to_probability(const Tensor<T>& cosine_score);

// Grounding term for one query column: mean BCE across proposals.
template <typename T>
Tensor<T> main_loss(const std::vector<Tensor<T>>& probs, const std::vector<int>& labels);

// Counterfactual term for one column: mean of -log(1-p) over the (usually
// single) target proposals.
template <typename T>
Tensor<T> cf_loss(const std::vector<Tensor<T>>& target_probs);

// Hungarian max-IoU matching of proposals to ground truth; pairs under the
// threshold are dropped. Unmatched proposals are negatives everywhere.
std::map<int, int> assign_labels(const std::vector<Box>& proposals,
                                 const std::vector<std::pair<int, Box>>& gt, double iou_threshold);

struct QueryBatchPlan {
    std::vector<std::string> expression_ids;        // N sampled
    std::vector<std::string> positive_texts;        // N
    std::vector<CounterfactualQuery> counterfactuals;  // N, index-matched
    LabelMatrix labels;
    std::vector<std::vector<int>> cf_targets;  // per cf column: proposal indices labeled 0
};

// Label assembly for the 1-Image-2N-Queries strategy. `expressions` and
// `counterfactuals` must be index-matched (counterfactual i derived from
// expression i).
QueryBatchPlan build_query_batch(const SceneRecord& frame,
                                 const std::vector<const Expression*>& expressions,
                                 const std::vector<CounterfactualQuery>& counterfactuals,
                                 const std::map<int, int>& label_map);

template <typename T>
struct LossBreakdown {
    Tensor<T> main;            // L_m
    Tensor<T> counterfactual;  // L_cf
    Tensor<T> total;           // L = L_m + L_cf
    int main_terms = 0;        // positive columns contributing
    int cf_terms = 0;          // counterfactual columns contributing
};

// Runs the 2N forward passes for one frame and reduces them: positive
// columns feed L_m over all proposals, counterfactual columns feed L_cf over
// their targets only (masked cells never execute). `full_cf_forward` scores
// every proposal in the counterfactual passes while still reducing over the
// targets only; the result must be bit-identical (masking exactness).
template <typename T>
LossBreakdown<T> frame_objective(const HmsiModel<T>& model, const FrameInputs<T>& frame,
                                 const FeatureProvider<T>& provider, const QueryBatchPlan& plan,
                                 bool cf_enabled, bool full_cf_forward = false);

}  // namespace coal
