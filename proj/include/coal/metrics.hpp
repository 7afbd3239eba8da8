// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "coal/matching.hpp"
#include "coal/priors.hpp"
#include "coal/tracker.hpp"

namespace coal {

// One frame of identities for evaluation.
struct FrameObjects {
    std::vector<int> ids;
    std::vector<Box> boxes;
};

using TrackSequence = std::map<int, FrameObjects>;  // frame -> objects

struct FrameMatch {
    // (gt index, pred index, iou) per true positive
    struct Pair {
        int gt = 0, pred = 0;
        double iou = 0.0;
    };
    std::vector<Pair> tp;
    int fp = 0, fn = 0;
};

// Per-alpha matching: candidate pairs need IoU >= alpha, then optimal
// summed-IoU assignment. Duplicate ids within a frame are an error.
FrameMatch match_frame(const FrameObjects& gt, const FrameObjects& pred, double alpha);

struct HotaResult {
    double hota = 0, deta = 0, assa = 0;
    double detre = 0, detpr = 0, assre = 0, asspr = 0, loca = 0;

    struct PerAlpha {
        double alpha = 0;
        double deta = 0, assa = 0, detre = 0, detpr = 0, assre = 0, asspr = 0, loca = 0;
        long long tp = 0, fp = 0, fn = 0;
    };
    std::vector<PerAlpha> per_alpha;
};

// The 19-point alpha grid {0.05..0.95}.
const std::vector<double>& hota_alphas();

// HOTA and companions over one expression-conditioned sequence. Conventions
// for degenerate cases (documented, mirrored by the test oracle): an
// empty-empty sequence scores 1.0 everywhere; with zero TPs, association
// terms are 0 and LocA is 1 (vacuous mean).
HotaResult hota(const TrackSequence& gt, const TrackSequence& pred);

struct ExpressionEval {
    std::string sequence_id;
    std::string expression_id;
    HotaResult result;
    bool missing_prediction = false;
};

struct BenchmarkReport {
    std::vector<ExpressionEval> rows;
    HotaResult aggregate;  // field-wise mean over rows
    std::string header_note;
};

// gt from the dataset's per-expression positives; predictions from
// "<sequence>__<expression>.txt" files under `predictions_dir`. Missing files
// score as empty predictions and are flagged.
BenchmarkReport evaluate_benchmark(const Dataset& dataset, const std::string& predictions_dir);

TrackSequence gt_sequence_for(const SequenceData& sequence, const Expression& expression);
TrackSequence prediction_sequence(const std::vector<TrackRecord>& records);

// Aligned table (HOTA first, LocA last) plus one JSON object per row and
// an aggregate object.
std::string format_report_table(const BenchmarkReport& report);
std::string format_report_json(const BenchmarkReport& report);

}  // namespace coal
