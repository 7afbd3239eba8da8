// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "coal/training.hpp"

namespace coal {

struct TrackerConfig {
    double tau_high = 0.4;
    double tau_low = 0.1;
    double epsilon = 0.4;   // new-track threshold
    double iou_gate = 0.3;  // association gate, both stages
    int max_lost = 30;
    bool combine_detector_score = false;  // multiply semantic by detector confidence
};

struct Detection {
    Box box;
    double semantic_score = 0.0;  // to_probability of the match score
    double detector_score = 1.0;
    int frame_id = 0;
    int proposal_index = -1;
};

// Constant-velocity filter over (cx, cy, aspect, h); ByteTrack noise
// convention (position std h/20, velocity std h/160).
struct KalmanState {
    std::array<double, 8> mean{};
    std::array<double, 64> cov{};  // row-major 8x8

    Box box() const;
};

KalmanState kalman_init(const Box& box);
KalmanState kalman_predict(const KalmanState& state);
KalmanState kalman_update(const KalmanState& state, const Box& observation);

enum class TrackStatus { tentative, confirmed, lost, removed };

struct Track {
    int track_id = 0;
    TrackStatus status = TrackStatus::tentative;
    KalmanState kalman;
    double last_score = 0.0;
    int age = 0;
    int hits = 0;
    int time_since_update = 0;
    bool updated_this_frame = false;
};

struct TrackRecord {
    int frame_id = 0;
    int track_id = 0;
    Box box;
    double score = 0.0;
};

// Two-stage score-gated association (high then low band), IoU-gated optimal
// matching per stage; unmatched high-score detections above epsilon spawn
// tracks. `first_frame` confirms newborns immediately.
void associate_step(std::vector<Track>& tracks, const std::vector<Detection>& detections,
                    const TrackerConfig& cfg, int& next_track_id, bool first_frame);

template <typename T>
std::vector<Detection> score_frame(const HmsiModel<T>& model, const FeatureProvider<T>& provider,
                                   const SceneRecord& frame, const std::string& expression_text,
                                   const TrackerConfig& cfg);

template <typename T>
std::vector<TrackRecord> run_sequence(const HmsiModel<T>& model, const FeatureProvider<T>& provider,
                                      const SequenceData& sequence, const Expression& expression,
                                      const TrackerConfig& cfg);

// MOTChallenge-style lines: frame,track_id,x,y,w,h,score,-1,-1,-1 with
// normalized top-left coordinates at 6 decimals, sorted by (frame, id).
std::string format_track_records(const std::vector<TrackRecord>& records);
void write_track_file(const std::vector<TrackRecord>& records, const std::string& path);
std::vector<TrackRecord> read_track_file(const std::string& path);

}  // namespace coal
