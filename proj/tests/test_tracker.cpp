// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>

#include "coal/tracker.hpp"
#include "test_util.hpp"

using namespace coal;

TEST_CASE("kalman mean is a fixed point for a stationary observation") {
    Box box{0.4, 0.5, 0.2, 0.3};
    KalmanState s = kalman_init(box);
    const auto mean0 = s.mean;
    for (int i = 0; i < 5; ++i) {
        s = kalman_predict(s);
        s = kalman_update(s, box);
    }
    for (int i = 0; i < 8; ++i) CHECK(s.mean[static_cast<std::size_t>(i)] == doctest::Approx(mean0[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("updating with the predicted mean leaves the mean unchanged") {
    Box box{0.3, 0.3, 0.1, 0.2};
    KalmanState s = kalman_init(box);
    s.mean[4] = 0.01;  // moving
    s = kalman_predict(s);
    KalmanState t = kalman_update(s, s.box());
    for (int i = 0; i < 8; ++i) CHECK(t.mean[static_cast<std::size_t>(i)] == doctest::Approx(s.mean[static_cast<std::size_t>(i)]).epsilon(1e-9));
}

namespace {

// Direct 8x8/4x4 matrix-formula Kalman oracle written with generic dense
// helpers, no shared code with the tracker implementation.
struct OracleKalman {
    std::array<double, 8> x{};
    std::array<std::array<double, 8>, 8> p{};

    static OracleKalman init(const Box& b) {
        OracleKalman o;
        const double h = std::max(b.h, 1e-6);
        o.x = {b.cx, b.cy, b.w / b.h, b.h, 0, 0, 0, 0};
        const double sp = 1.0 / 20.0, sv = 1.0 / 160.0;
        const std::array<double, 8> stds = {2 * sp * h, 2 * sp * h, 1e-2, 2 * sp * h,
                                            10 * sv * h, 10 * sv * h, 1e-5, 10 * sv * h};
        for (int i = 0; i < 8; ++i) o.p[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = stds[static_cast<std::size_t>(i)] * stds[static_cast<std::size_t>(i)];
        return o;
    }

    void predict() {
        std::array<std::array<double, 8>, 8> f{};
        for (int i = 0; i < 8; ++i) f[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
        for (int i = 0; i < 4; ++i) f[static_cast<std::size_t>(i)][static_cast<std::size_t>(i + 4)] = 1.0;
        std::array<double, 8> nx{};
        for (int i = 0; i < 8; ++i)
            for (int k = 0; k < 8; ++k) nx[static_cast<std::size_t>(i)] += f[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(k)];
        std::array<std::array<double, 8>, 8> fp{}, np{};
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int k = 0; k < 8; ++k) fp[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += f[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * p[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int k = 0; k < 8; ++k) np[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += fp[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * f[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        const double h = std::max(x[3], 1e-6);
        const double sp = 1.0 / 20.0, sv = 1.0 / 160.0;
        const std::array<double, 8> q = {sp * h, sp * h, 1e-2, sp * h, sv * h, sv * h, 1e-5, sv * h};
        for (int i = 0; i < 8; ++i) np[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] += q[static_cast<std::size_t>(i)] * q[static_cast<std::size_t>(i)];
        x = nx;
        p = np;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                const double v = (p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] + p[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]) / 2;
                p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
                p[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
            }
    }

    void update(const Box& b) {
        const double h = std::max(x[3], 1e-6);
        const double sp = 1.0 / 20.0;
        std::array<std::array<double, 4>, 4> s{};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        const std::array<double, 4> r = {sp * h, sp * h, 1e-1, sp * h};
        for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] += r[static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(i)];
        // invert s by Gauss-Jordan
        std::array<std::array<double, 8>, 4> aug{};
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) aug[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            aug[static_cast<std::size_t>(i)][static_cast<std::size_t>(i + 4)] = 1.0;
        }
        for (int col = 0; col < 4; ++col) {
            int piv = col;
            for (int rr = col + 1; rr < 4; ++rr)
                if (std::fabs(aug[static_cast<std::size_t>(rr)][static_cast<std::size_t>(col)]) > std::fabs(aug[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)])) piv = rr;
            std::swap(aug[static_cast<std::size_t>(col)], aug[static_cast<std::size_t>(piv)]);
            const double d = aug[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
            for (int j = 0; j < 8; ++j) aug[static_cast<std::size_t>(col)][static_cast<std::size_t>(j)] /= d;
            for (int rr = 0; rr < 4; ++rr) {
                if (rr == col) continue;
                const double f = aug[static_cast<std::size_t>(rr)][static_cast<std::size_t>(col)];
                for (int j = 0; j < 8; ++j) aug[static_cast<std::size_t>(rr)][static_cast<std::size_t>(j)] -= f * aug[static_cast<std::size_t>(col)][static_cast<std::size_t>(j)];
            }
        }
        std::array<std::array<double, 4>, 8> gain{};
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 4; ++j)
                for (int k = 0; k < 4; ++k)
                    gain[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += p[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * aug[static_cast<std::size_t>(k)][static_cast<std::size_t>(j + 4)];
        const std::array<double, 4> innov = {b.cx - x[0], b.cy - x[1], b.w / std::max(b.h, 1e-6) - x[2],
                                             b.h - x[3]};
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 4; ++j) x[static_cast<std::size_t>(i)] += gain[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * innov[static_cast<std::size_t>(j)];
        std::array<std::array<double, 8>, 8> np = p;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int k = 0; k < 4; ++k) np[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -= gain[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * p[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        p = np;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                const double v = (p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] + p[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]) / 2;
                p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
                p[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
            }
    }
};

}  // namespace

TEST_CASE("ten-step constant-velocity tracking matches the matrix oracle") {
    Box start{0.2, 0.3, 0.12, 0.2};
    KalmanState s = kalman_init(start);
    OracleKalman o = OracleKalman::init(start);
    for (int step = 1; step <= 10; ++step) {
        Box truth{0.2 + 0.01 * step, 0.3 + 0.005 * step, 0.12, 0.2};
        s = kalman_predict(s);
        o.predict();
        s = kalman_update(s, truth);
        o.update(truth);
        for (int i = 0; i < 8; ++i)
            CHECK(std::fabs(s.mean[static_cast<std::size_t>(i)] - o.x[static_cast<std::size_t>(i)]) < 1e-6);
    }
    // after convergence the filter rides the constant-velocity target
    CHECK(std::fabs(s.mean[0] - 0.3) < 5e-3);
    CHECK(std::fabs(s.mean[4] - 0.01) < 5e-3);
}

TEST_CASE("covariance stays symmetric within tolerance") {
    Box box{0.5, 0.5, 0.2, 0.2};
    KalmanState s = kalman_init(box);
    Rng rng(81);
    for (int i = 0; i < 100; ++i) {
        s = kalman_predict(s);
        Box obs{0.5 + rng.uniform(-0.02, 0.02), 0.5 + rng.uniform(-0.02, 0.02), 0.2, 0.2};
        s = kalman_update(s, obs);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c)
                CHECK(std::fabs(s.cov[static_cast<std::size_t>(r) * 8 + c] -
                                s.cov[static_cast<std::size_t>(c) * 8 + r]) < 1e-9);
    }
}

namespace {

Detection det(double cx, double cy, double w, double h, double score, int frame = 0) {
    Detection d;
    d.box = Box{cx, cy, w, h};
    d.semantic_score = score;
    d.frame_id = frame;
    return d;
}

}  // namespace

TEST_CASE("associate_step spawns and filters by the score thresholds") {
    TrackerConfig cfg;
    std::vector<Track> tracks;
    int next_id = 1;

    // score 0.5 >= epsilon: one new track, confirmed at sequence start
    associate_step(tracks, {det(0.5, 0.5, 0.1, 0.1, 0.5)}, cfg, next_id, true);
    REQUIRE(tracks.size() == 1);
    CHECK(tracks[0].status == TrackStatus::confirmed);
    CHECK(tracks[0].track_id == 1);

    // score 0.05 < tau_low: ignored entirely
    std::vector<Track> none;
    int id2 = 1;
    associate_step(none, {det(0.5, 0.5, 0.1, 0.1, 0.05)}, cfg, id2, true);
    CHECK(none.empty());

    // mid-band score (tau_low <= s < tau_high) cannot spawn a track
    std::vector<Track> none2;
    int id3 = 1;
    associate_step(none2, {det(0.5, 0.5, 0.1, 0.1, 0.2)}, cfg, id3, true);
    CHECK(none2.empty());
}

TEST_CASE("three-track association equals the brute-force IoU matching") {
    TrackerConfig cfg;
    std::vector<Track> tracks;
    int next_id = 1;
    std::vector<Detection> first = {det(0.2, 0.2, 0.1, 0.1, 0.9), det(0.5, 0.5, 0.1, 0.1, 0.9),
                                    det(0.8, 0.8, 0.1, 0.1, 0.9)};
    associate_step(tracks, first, cfg, next_id, true);
    REQUIRE(tracks.size() == 3);

    // shuffled detections near the previous positions
    std::vector<Detection> second = {det(0.79, 0.8, 0.1, 0.1, 0.9), det(0.21, 0.2, 0.1, 0.1, 0.9),
                                     det(0.5, 0.51, 0.1, 0.1, 0.9)};
    for (auto& t : tracks) t.kalman = kalman_predict(t.kalman);

    CostMatrix costs(3, 3);
    for (int t = 0; t < 3; ++t)
        for (int d = 0; d < 3; ++d) {
            const double v = iou(tracks[static_cast<std::size_t>(t)].kalman.box(), second[static_cast<std::size_t>(d)].box);
            if (v < cfg.iou_gate)
                costs.forbid(t, d);
            else
                costs.at(t, d) = v;
        }
    auto oracle = coal_test::brute_force_assignment(costs, true);

    associate_step(tracks, second, cfg, next_id, false);
    CHECK(tracks.size() == 3);  // no new tracks
    // oracle says track 0 -> det 1, track 1 -> det 2, track 2 -> det 0
    std::map<int, int> want;
    for (const auto& [t, d] : oracle.pairs) want[t] = d;
    for (int t = 0; t < 3; ++t) {
        const Box got = tracks[static_cast<std::size_t>(t)].kalman.box();
        const Box expect = second[static_cast<std::size_t>(want.at(t))].box;
        CHECK(iou(got, expect) > 0.8);
    }
}

TEST_CASE("track lifecycle: tentative, confirm, lose, remove") {
    TrackerConfig cfg;
    cfg.max_lost = 2;
    std::vector<Track> tracks;
    int next_id = 1;

    // mid-sequence birth is tentative and unconfirmed until the second hit
    associate_step(tracks, {det(0.5, 0.5, 0.1, 0.1, 0.9)}, cfg, next_id, false);
    REQUIRE(tracks.size() == 1);
    CHECK(tracks[0].status == TrackStatus::tentative);
    for (auto& t : tracks) t.kalman = kalman_predict(t.kalman);
    associate_step(tracks, {det(0.5, 0.5, 0.1, 0.1, 0.9)}, cfg, next_id, false);
    CHECK(tracks[0].status == TrackStatus::confirmed);

    // miss beyond max_lost removes it
    for (int i = 0; i < cfg.max_lost + 1; ++i) {
        for (auto& t : tracks)
            if (t.status != TrackStatus::removed) t.kalman = kalman_predict(t.kalman);
        associate_step(tracks, {}, cfg, next_id, false);
    }
    CHECK(tracks[0].status == TrackStatus::removed);

    // a tentative track missing its second frame is dropped immediately
    std::vector<Track> t2;
    int id2 = 10;
    associate_step(t2, {det(0.3, 0.3, 0.1, 0.1, 0.9)}, cfg, id2, false);
    for (auto& t : t2)
        if (t.status != TrackStatus::removed) t.kalman = kalman_predict(t.kalman);
    associate_step(t2, {}, cfg, id2, false);
    CHECK(t2[0].status == TrackStatus::removed);
}

namespace {

SequenceData single_object_sequence(int frames, const std::set<int>& drop_frames = {}) {
    AttributeGrammar grammar = AttributeGrammar::default_grammar();
    SequenceData seq;
    seq.sequence_id = "seqX";
    Expression e;
    e.id = "e0";
    e.attributes = {{"category", "car"}};
    e.text = "the car";
    for (int f = 0; f < frames; ++f) {
        SceneRecord rec;
        rec.sequence_id = seq.sequence_id;
        rec.frame_id = f;
        GtObject o;
        o.object_id = 1;
        o.box = Box{0.3 + 0.005 * f, 0.5, 0.15, 0.2};
        o.attributes = {{"category", "car"}, {"color", "red"}, {"location", "center"},
                        {"motion", "moving"}};
        rec.gt_objects.push_back(o);
        if (!drop_frames.count(f))
            rec.proposals.push_back({o.box, grammar.render(o.attributes), 0.95});
        rec.positives["e0"] = {1};
        e.positives[f] = {1};
        seq.frames.push_back(rec);
    }
    seq.expressions.push_back(e);
    return seq;
}

struct TrackFixture {
    AttributeGrammar grammar = AttributeGrammar::default_grammar();
    EncoderConfig ecfg;
    ModelConfig mcfg;
    FeatureProvider<double> provider;
    HmsiModel<double> model;

    TrackFixture()
        : ecfg([] {
              EncoderConfig c;
              c.d = 16;
              c.map_h = 8;
              c.map_w = 8;
              c.seed = 5;
              return c;
          }()),
          mcfg([] {
              ModelConfig c;
              c.d = 16;
              c.heads = 2;
              c.levels = 4;
              c.deform_points = 2;
              return c;
          }()),
          provider(grammar, ecfg),
          model(HmsiModel<double>::init(mcfg, 5)) {}
};

}  // namespace

TEST_CASE("score_frame contracts") {
    TrackFixture fx;
    TrackerConfig cfg;
    SequenceData seq = single_object_sequence(1);
    auto dets = score_frame(fx.model, fx.provider, seq.frames[0], "the car", cfg);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].semantic_score >= 0.0);
    CHECK(dets[0].semantic_score <= 1.0);

    SceneRecord empty;
    empty.sequence_id = "seqX";
    empty.frame_id = 0;
    CHECK(score_frame(fx.model, fx.provider, empty, "the car", cfg).empty());
}

TEST_CASE("single object noiseless sequence keeps one track id") {
    TrackFixture fx;
    TrackerConfig cfg;
    SequenceData seq = single_object_sequence(12);
    auto records = run_sequence(fx.model, fx.provider, seq, seq.expressions[0], cfg);
    REQUIRE_FALSE(records.empty());
    for (const auto& r : records) {
        CHECK(r.track_id == 1);
        CHECK(r.score >= cfg.tau_low);
    }
    CHECK(records.size() == 12);  // emitted every frame
}

TEST_CASE("an object absent beyond max_lost returns with a new id") {
    TrackFixture fx;
    TrackerConfig cfg;
    cfg.max_lost = 2;
    std::set<int> gap;
    for (int f = 3; f < 8; ++f) gap.insert(f);
    SequenceData seq = single_object_sequence(14, gap);
    auto records = run_sequence(fx.model, fx.provider, seq, seq.expressions[0], cfg);
    std::set<int> ids;
    for (const auto& r : records) ids.insert(r.track_id);
    CHECK(ids.size() == 2);
}

TEST_CASE("run_sequence output is byte identical across runs") {
    TrackFixture fx;
    TrackerConfig cfg;
    SequenceData seq = single_object_sequence(9);
    auto r1 = run_sequence(fx.model, fx.provider, seq, seq.expressions[0], cfg);
    auto r2 = run_sequence(fx.model, fx.provider, seq, seq.expressions[0], cfg);
    CHECK(format_track_records(r1) == format_track_records(r2));

    const std::string path = "tracker_out_test.txt";
    write_track_file(r1, path);
    auto parsed = read_track_file(path);
    REQUIRE(parsed.size() == r1.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].frame_id == r1[i].frame_id);
        CHECK(parsed[i].track_id == r1[i].track_id);
        CHECK(std::fabs(parsed[i].box.cx - r1[i].box.cx) < 1e-5);
    }
    std::filesystem::remove(path);
}

TEST_CASE("MOT line format") {
    TrackRecord r;
    r.frame_id = 3;
    r.track_id = 7;
    r.box = Box{0.5, 0.5, 0.2, 0.1};
    r.score = 0.753214999;
    const std::string line = format_track_records({r});
    CHECK(line == "3,7,0.400000,0.450000,0.200000,0.100000,0.753215,-1,-1,-1\n");
}
