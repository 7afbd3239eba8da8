// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "coal/matching.hpp"

namespace coal {

namespace {

constexpr double kStdPos = 1.0 / 20.0;
constexpr double kStdVel = 1.0 / 160.0;

using Mat8 = std::array<double, 64>;
using Vec8 = std::array<double, 8>;

double& at8(Mat8& m, int r, int c) { return m[static_cast<std::size_t>(r) * 8 + c]; }
double at8(const Mat8& m, int r, int c) { return m[static_cast<std::size_t>(r) * 8 + c]; }

// PSD check via Cholesky of C + tol*I: failure means an eigenvalue < -tol.
bool psd_within(const Mat8& m, double tol) {
    Mat8 a = m;
    for (int i = 0; i < 8; ++i) at8(a, i, i) += tol;
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = at8(a, i, j);
            for (int k = 0; k < j; ++k) sum -= at8(a, i, k) * at8(a, j, k);
            if (i == j) {
                if (sum <= 0.0) return false;
                at8(a, i, i) = std::sqrt(sum);
            } else {
                at8(a, i, j) = sum / at8(a, j, j);
            }
        }
    }
    return true;
}

void symmetrize(Mat8& m) {
    for (int i = 0; i < 8; ++i)
        for (int j = i + 1; j < 8; ++j) {
            const double v = (at8(m, i, j) + at8(m, j, i)) / 2.0;
            at8(m, i, j) = v;
            at8(m, j, i) = v;
        }
    if (!psd_within(m, 1e-6))
        throw NumericError("kalman: covariance lost positive semidefiniteness");
}

}  // namespace

Box KalmanState::box() const {
    Box b;
    const double h = std::max(mean[3], 0.0);
    const double a = std::max(mean[2], 0.0);
    b.cx = mean[0];
    b.cy = mean[1];
    b.h = h;
    b.w = a * h;
    return b;
}

KalmanState kalman_init(const Box& box) {
    KalmanState s;
    const double h = std::max(box.h, 1e-6);
    s.mean = {box.cx, box.cy, box.h > 0 ? box.w / box.h : 0.0, box.h, 0, 0, 0, 0};
    const std::array<double, 8> std_dev = {2 * kStdPos * h, 2 * kStdPos * h, 1e-2, 2 * kStdPos * h,
                                           10 * kStdVel * h, 10 * kStdVel * h, 1e-5, 10 * kStdVel * h};
    for (int i = 0; i < 8; ++i) at8(s.cov, i, i) = std_dev[static_cast<std::size_t>(i)] * std_dev[static_cast<std::size_t>(i)];
    return s;
}

KalmanState kalman_predict(const KalmanState& state) {
    KalmanState out;
    // x' = F x with F = [I, I*dt; 0, I], dt = 1
    for (int i = 0; i < 4; ++i) {
        out.mean[static_cast<std::size_t>(i)] =
            state.mean[static_cast<std::size_t>(i)] + state.mean[static_cast<std::size_t>(i + 4)];
        out.mean[static_cast<std::size_t>(i + 4)] = state.mean[static_cast<std::size_t>(i + 4)];
    }
    // P' = F P F^T + Q
    Mat8 fp{};
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double v = at8(state.cov, i, j);
            if (i < 4) v += at8(state.cov, i + 4, j);
            at8(fp, i, j) = v;
        }
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double v = at8(fp, i, j);
            if (j < 4) v += at8(fp, i, j + 4);
            at8(out.cov, i, j) = v;
        }
    const double h = std::max(state.mean[3], 1e-6);
    const std::array<double, 8> q_std = {kStdPos * h, kStdPos * h, 1e-2, kStdPos * h,
                                         kStdVel * h, kStdVel * h, 1e-5, kStdVel * h};
    for (int i = 0; i < 8; ++i)
        at8(out.cov, i, i) += q_std[static_cast<std::size_t>(i)] * q_std[static_cast<std::size_t>(i)];
    symmetrize(out.cov);
    return out;
}

KalmanState kalman_update(const KalmanState& state, const Box& observation) {
    const double h = std::max(state.mean[3], 1e-6);
    const std::array<double, 4> r_std = {kStdPos * h, kStdPos * h, 1e-1, kStdPos * h};
    // S = H P H^T + R is the top-left 4x4 block of P plus R
    std::array<double, 16> s{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) s[static_cast<std::size_t>(i) * 4 + j] = at8(state.cov, i, j);
    for (int i = 0; i < 4; ++i)
        s[static_cast<std::size_t>(i) * 4 + i] += r_std[static_cast<std::size_t>(i)] * r_std[static_cast<std::size_t>(i)];

    // K = P H^T S^-1; S is symmetric, so each gain row solves S x = (P H^T)_row
    std::array<double, 32> pht{};  // 8x4
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 4; ++j) pht[static_cast<std::size_t>(i) * 4 + j] = at8(state.cov, i, j);
    std::array<double, 32> gain{};  // 8x4
    {
        // LU of S with partial pivoting (row-swap form)
        std::array<double, 16> a = s;
        std::array<int, 4> piv = {0, 1, 2, 3};
        for (int col = 0; col < 4; ++col) {
            int p = col;
            for (int r = col + 1; r < 4; ++r)
                if (std::fabs(a[static_cast<std::size_t>(r) * 4 + col]) >
                    std::fabs(a[static_cast<std::size_t>(p) * 4 + col]))
                    p = r;
            if (p != col) {
                for (int c2 = 0; c2 < 4; ++c2)
                    std::swap(a[static_cast<std::size_t>(col) * 4 + c2], a[static_cast<std::size_t>(p) * 4 + c2]);
                std::swap(piv[static_cast<std::size_t>(col)], piv[static_cast<std::size_t>(p)]);
            }
            const double diag = a[static_cast<std::size_t>(col) * 4 + col];
            if (std::fabs(diag) < 1e-18) throw NumericError("kalman: singular innovation covariance");
            for (int r = col + 1; r < 4; ++r) {
                const double f = a[static_cast<std::size_t>(r) * 4 + col] / diag;
                a[static_cast<std::size_t>(r) * 4 + col] = f;
                for (int c2 = col + 1; c2 < 4; ++c2)
                    a[static_cast<std::size_t>(r) * 4 + c2] -= f * a[static_cast<std::size_t>(col) * 4 + c2];
            }
        }
        for (int row = 0; row < 8; ++row) {
            std::array<double, 4> z{};
            for (int col = 0; col < 4; ++col) {
                double sum = pht[static_cast<std::size_t>(row) * 4 +
                                 static_cast<std::size_t>(piv[static_cast<std::size_t>(col)])];
                for (int k = 0; k < col; ++k)
                    sum -= a[static_cast<std::size_t>(col) * 4 + k] * z[static_cast<std::size_t>(k)];
                z[static_cast<std::size_t>(col)] = sum;
            }
            for (int col = 3; col >= 0; --col) {
                double sum = z[static_cast<std::size_t>(col)];
                for (int k = col + 1; k < 4; ++k)
                    sum -= a[static_cast<std::size_t>(col) * 4 + k] *
                           gain[static_cast<std::size_t>(row) * 4 + k];
                gain[static_cast<std::size_t>(row) * 4 + col] = sum / a[static_cast<std::size_t>(col) * 4 + col];
            }
        }
    }

    const double hh = std::max(observation.h, 1e-6);
    const std::array<double, 4> innovation = {observation.cx - state.mean[0],
                                              observation.cy - state.mean[1],
                                              observation.w / hh - state.mean[2],
                                              observation.h - state.mean[3]};
    KalmanState out = state;
    for (int i = 0; i < 8; ++i) {
        double delta = 0.0;
        for (int j = 0; j < 4; ++j)
            delta += gain[static_cast<std::size_t>(i) * 4 + j] * innovation[static_cast<std::size_t>(j)];
        out.mean[static_cast<std::size_t>(i)] += delta;
    }
    // P = (I - K H) P : subtract K * (top 4 rows of P)
    Mat8 updated = state.cov;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double delta = 0.0;
            for (int k = 0; k < 4; ++k)
                delta += gain[static_cast<std::size_t>(i) * 4 + k] * at8(state.cov, k, j);
            at8(updated, i, j) -= delta;
        }
    out.cov = updated;
    symmetrize(out.cov);
    return out;
}

namespace {

// one association stage: optimal IoU matching over the gate
void match_stage(std::vector<Track>& tracks, const std::vector<int>& track_idx,
                 const std::vector<Detection>& dets, const std::vector<int>& det_idx,
                 double iou_gate, std::vector<char>& track_matched, std::vector<char>& det_matched) {
    if (track_idx.empty() || det_idx.empty()) return;
    CostMatrix costs(static_cast<int>(track_idx.size()), static_cast<int>(det_idx.size()));
    for (std::size_t t = 0; t < track_idx.size(); ++t) {
        const Box pred = tracks[static_cast<std::size_t>(track_idx[t])].kalman.box();
        for (std::size_t d = 0; d < det_idx.size(); ++d) {
            const double v = iou(pred, dets[static_cast<std::size_t>(det_idx[d])].box);
            if (v < iou_gate)
                costs.forbid(static_cast<int>(t), static_cast<int>(d));
            else
                costs.at(static_cast<int>(t), static_cast<int>(d)) = v;
        }
    }
    const AssignmentResult res = linear_assignment(costs, /*maximize=*/true);
    for (const auto& [t, d] : res.pairs) {
        Track& track = tracks[static_cast<std::size_t>(track_idx[static_cast<std::size_t>(t)])];
        const Detection& det = dets[static_cast<std::size_t>(det_idx[static_cast<std::size_t>(d)])];
        track.kalman = kalman_update(track.kalman, det.box);
        track.last_score = det.semantic_score;
        track.hits += 1;
        track.time_since_update = 0;
        track.updated_this_frame = true;
        if (track.status == TrackStatus::tentative && track.hits >= 2)
            track.status = TrackStatus::confirmed;
        else if (track.status == TrackStatus::lost)
            track.status = TrackStatus::confirmed;
        track_matched[static_cast<std::size_t>(track_idx[static_cast<std::size_t>(t)])] = 1;
        det_matched[static_cast<std::size_t>(det_idx[static_cast<std::size_t>(d)])] = 1;
    }
}

}  // namespace

void associate_step(std::vector<Track>& tracks, const std::vector<Detection>& detections,
                    const TrackerConfig& cfg, int& next_track_id, bool first_frame) {
    for (auto& t : tracks) t.updated_this_frame = false;

    std::vector<int> high, low;
    for (std::size_t d = 0; d < detections.size(); ++d) {
        const double s = detections[d].semantic_score;
        if (s >= cfg.tau_high)
            high.push_back(static_cast<int>(d));
        else if (s >= cfg.tau_low)
            low.push_back(static_cast<int>(d));
        // below tau_low: ignored entirely
    }

    std::vector<int> alive;
    for (std::size_t t = 0; t < tracks.size(); ++t)
        if (tracks[t].status != TrackStatus::removed) alive.push_back(static_cast<int>(t));

    std::vector<char> track_matched(tracks.size(), 0);
    std::vector<char> det_matched(detections.size(), 0);
    match_stage(tracks, alive, detections, high, cfg.iou_gate, track_matched, det_matched);

    std::vector<int> remaining;
    for (int t : alive)
        if (!track_matched[static_cast<std::size_t>(t)]) remaining.push_back(t);
    match_stage(tracks, remaining, detections, low, cfg.iou_gate, track_matched, det_matched);

    for (int t : alive) {
        if (track_matched[static_cast<std::size_t>(t)]) continue;
        Track& track = tracks[static_cast<std::size_t>(t)];
        track.time_since_update += 1;
        if (track.status == TrackStatus::tentative) {
            track.status = TrackStatus::removed;
        } else {
            track.status = TrackStatus::lost;
            if (track.time_since_update > cfg.max_lost) track.status = TrackStatus::removed;
        }
    }

    for (int d : high) {
        if (det_matched[static_cast<std::size_t>(d)]) continue;
        const Detection& det = detections[static_cast<std::size_t>(d)];
        if (det.semantic_score < cfg.epsilon) continue;
        Track track;
        track.track_id = next_track_id++;
        track.status = first_frame ? TrackStatus::confirmed : TrackStatus::tentative;
        track.kalman = kalman_init(det.box);
        track.last_score = det.semantic_score;
        track.hits = 1;
        track.updated_this_frame = true;
        tracks.push_back(std::move(track));
    }

    for (auto& t : tracks)
        if (t.status != TrackStatus::removed) t.age += 1;
}

template <typename T>
std::vector<Detection> score_frame(const HmsiModel<T>& model, const FeatureProvider<T>& provider,
                                   const SceneRecord& frame, const std::string& expression_text,
                                   const TrackerConfig& cfg) {
    std::vector<Detection> out;
    if (frame.proposals.empty()) return out;
    if (provider.config().d != model.config.d)
        throw std::invalid_argument("score_frame: encoder dimension does not match the model");
    FrameInputs<T> inputs;
    inputs.visual = provider.encode_frame(frame).features;
    for (const auto& p : frame.proposals) {
        inputs.boxes.push_back(p.box);
        if (model.config.esi_enabled) inputs.captions.push_back(provider.encode_text(p.caption));
    }
    const TextEmbedding<T> query = provider.encode_text(expression_text);
    std::vector<Tensor<T>> scores = forward_scores(model, inputs, query);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        Detection d;
        d.box = frame.proposals[i].box;
        d.detector_score = frame.proposals[i].detector_score;
        double p = (static_cast<double>(scores[i].value()) + 1.0) / 2.0;
        p = std::min(std::max(p, 0.0), 1.0);
        if (cfg.combine_detector_score) p *= d.detector_score;
        d.semantic_score = p;
        d.frame_id = frame.frame_id;
        d.proposal_index = static_cast<int>(i);
        out.push_back(d);
    }
    return out;
}

template <typename T>
std::vector<TrackRecord> run_sequence(const HmsiModel<T>& model, const FeatureProvider<T>& provider,
                                      const SequenceData& sequence, const Expression& expression,
                                      const TrackerConfig& cfg) {
    std::vector<Track> tracks;
    std::vector<TrackRecord> records;
    int next_id = 1;
    bool first = true;
    for (const auto& frame : sequence.frames) {
        const std::vector<Detection> dets = score_frame(model, provider, frame, expression.text, cfg);
        for (auto& t : tracks)
            if (t.status != TrackStatus::removed) t.kalman = kalman_predict(t.kalman);
        associate_step(tracks, dets, cfg, next_id, first);
        first = false;
        for (const auto& t : tracks) {
            if (t.status != TrackStatus::confirmed || !t.updated_this_frame) continue;
            TrackRecord r;
            r.frame_id = frame.frame_id;
            r.track_id = t.track_id;
            r.box = t.kalman.box();
            r.score = t.last_score;
            records.push_back(r);
        }
    }
    std::sort(records.begin(), records.end(), [](const TrackRecord& a, const TrackRecord& b) {
        return a.frame_id != b.frame_id ? a.frame_id < b.frame_id : a.track_id < b.track_id;
    });
    return records;
}

std::string format_track_records(const std::vector<TrackRecord>& records) {
    std::string out;
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,-1,-1,-1\n", r.frame_id,
                      r.track_id, r.box.x1(), r.box.y1(), r.box.w, r.box.h, r.score);
        out += buf;
    }
    return out;
}

void write_track_file(const std::vector<TrackRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << format_track_records(records);
    if (!f) throw IoError("write failed: " + path);
}

std::vector<TrackRecord> read_track_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<TrackRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        TrackRecord r;
        double x = 0, y = 0;
        if (!(is >> r.frame_id >> r.track_id >> x >> y >> r.box.w >> r.box.h >> r.score))
            throw ValidationError(path + ":" + std::to_string(line_no) + ": malformed track line");
        r.box.cx = x + r.box.w / 2.0;
        r.box.cy = y + r.box.h / 2.0;
        out.push_back(r);
    }
    return out;
}

template std::vector<Detection> score_frame<float>(const HmsiModel<float>&,
                                                   const FeatureProvider<float>&, const SceneRecord&,
                                                   const std::string&, const TrackerConfig&);
template std::vector<Detection> score_frame<double>(const HmsiModel<double>&,
                                                    const FeatureProvider<double>&, const SceneRecord&,
                                                    const std::string&, const TrackerConfig&);
template std::vector<TrackRecord> run_sequence<float>(const HmsiModel<float>&,
                                                      const FeatureProvider<float>&,
                                                      const SequenceData&, const Expression&,
                                                      const TrackerConfig&);
template std::vector<TrackRecord> run_sequence<double>(const HmsiModel<double>&,
                                                       const FeatureProvider<double>&,
                                                       const SequenceData&, const Expression&,
                                                       const TrackerConfig&);

}  // namespace coal
