// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance suite. Each test prints one PASS/FAIL line through
// the REPORT macro; run via ctest or directly.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "coal/cli.hpp"
#include "coal/gradcheck.hpp"
#include "coal/metrics.hpp"
#include "coal/tracker.hpp"
#include "coal/training.hpp"
#include "test_util.hpp"

using namespace coal;
namespace fs = std::filesystem;

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

struct TmpDir {
    std::string path;
    explicit TmpDir(const std::string& name) : path("acceptance_" + name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("criterion 1: gradient suite at 64-bit, rel err <= 1e-4, < 60 s") {
    Stopwatch watch;
    const auto results = run_standard_gradchecks();
    double worst = 0.0;
    std::string worst_name;
    bool all_pass = true;
    bool has_end_to_end = false;
    for (const auto& r : results) {
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
        all_pass = all_pass && r.pass;
        if (r.name == "hmsi_end_to_end") has_end_to_end = true;
    }
    const double elapsed = watch.seconds();
    const bool pass = all_pass && has_end_to_end && elapsed < 60.0;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "%zu ops, worst %.3g (%s), %.1f s", results.size(), worst,
                  worst_name.c_str(), elapsed);
    report("criterion 1 gradient suite", pass, detail);
    CHECK(all_pass);
    CHECK(has_end_to_end);
    CHECK(elapsed < 60.0);
}

TEST_CASE("criterion 2: assignment equals brute force up to 7x7, < 30 s") {
    Stopwatch watch;
    Rng rng(240215);
    long long instances = 0;
    bool all_equal = true;
    for (int m = 1; m <= 7 && all_equal; ++m) {
        for (int n = 1; n <= 7 && all_equal; ++n) {
            for (int t = 0; t < 1000; ++t) {
                CostMatrix costs(m, n);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) {
                        costs.at(r, c) = rng.uniform(-1.0, 1.0);
                        if (t % 4 == 3 && rng.bernoulli(0.25)) costs.forbid(r, c);
                    }
                const bool maximize = t % 2 == 1;
                const AssignmentResult got = linear_assignment(costs, maximize);
                const AssignmentResult want = coal_test::brute_force_assignment(costs, maximize);
                if (got.pairs != want.pairs || got.total_cost != want.total_cost) {
                    all_equal = false;
                    break;
                }
                ++instances;
            }
        }
    }
    const double elapsed = watch.seconds();
    const bool pass = all_equal && instances == 49000 && elapsed < 30.0;
    char detail[120];
    std::snprintf(detail, sizeof(detail), "%lld instances exact, %.1f s", instances, elapsed);
    report("criterion 2 assignment oracle", pass, detail);
    CHECK(all_equal);
    CHECK(instances == 49000);
    CHECK(elapsed < 30.0);
}

TEST_CASE("criterion 3: HOTA matches the independent evaluator on 500 sequences, < 60 s") {
    Stopwatch watch;
    Rng rng(777);
    int checked = 0;
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
        TrackSequence gt, pred;
        const int frames = 1 + static_cast<int>(rng.uniform_index(5));
        const int objects = 1 + static_cast<int>(rng.uniform_index(4));
        std::vector<Box> base;
        for (int o = 0; o < objects; ++o)
            base.push_back(Box{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85),
                               rng.uniform(0.05, 0.25), rng.uniform(0.05, 0.25)});
        for (int f = 0; f < frames; ++f) {
            FrameObjects g, p;
            for (int o = 0; o < objects; ++o) {
                if (rng.bernoulli(0.85)) {
                    g.ids.push_back(o + 1);
                    g.boxes.push_back(base[static_cast<std::size_t>(o)]);
                }
                if (rng.bernoulli(0.8)) {
                    p.ids.push_back(rng.bernoulli(0.2) ? 50 + o + f % 2 : o + 1);
                    Box b = base[static_cast<std::size_t>(o)];
                    b.cx += rng.uniform(-0.03, 0.03);
                    b.cy += rng.uniform(-0.03, 0.03);
                    p.boxes.push_back(b);
                }
            }
            if (rng.bernoulli(0.25)) {
                p.ids.push_back(900 + f);
                p.boxes.push_back(Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1});
            }
            gt[f] = g;
            pred[f] = p;
        }
        const HotaResult got = hota(gt, pred);
        const coal_test::OracleHota want = coal_test::brute_force_hota(gt, pred);
        for (const auto& [a, b] : std::initializer_list<std::pair<double, double>>{
                 {got.hota, want.hota},
                 {got.deta, want.deta},
                 {got.assa, want.assa},
                 {got.detre, want.detre},
                 {got.detpr, want.detpr},
                 {got.assre, want.assre},
                 {got.asspr, want.asspr},
                 {got.loca, want.loca}})
            worst = std::max(worst, std::fabs(a - b));
        ++checked;
        if (worst > 1e-9) break;
    }
    const double elapsed = watch.seconds();
    const bool pass = checked == 500 && worst <= 1e-9 && elapsed < 60.0;
    char detail[120];
    std::snprintf(detail, sizeof(detail), "%d sequences, worst |diff| %.3g, %.1f s", checked, worst,
                  elapsed);
    report("criterion 3 HOTA oracle", pass, detail);
    CHECK(checked == 500);
    CHECK(worst <= 1e-9);
    CHECK(elapsed < 60.0);
}

namespace {

// criteria 4 and 5 share one trained model; the heavy run happens once
struct OverfitRun {
    Dataset dataset;
    TrainState<float> state{HmsiModel<float>(), {}, 0, {}};
    double first_epoch_loss = 0.0;
    double final_epoch_loss = 0.0;
    double train_seconds = 0.0;
    GroundingReport report;

    OverfitRun() {
        DatasetGenParams dp;
        dp.n_sequences = 1;
        dp.sequence.n_frames = 20;
        dp.sequence.n_expressions = 10;
        dp.sequence.scene.n_objects = 4;
        dp.seed = 42;
        dataset = generate_dataset(dp, AttributeGrammar::default_grammar());

        TrainConfig cfg;
        cfg.epochs = 300;
        // the criterion pins the dataset, d=32, seed 42 and 300 epochs; the
        // step size is free, and 1e-3 reaches full separation inside budget
        cfg.lr = 1e-3;
        cfg.n_queries = 10;
        cfg.seed = 42;
        cfg.model.d = 32;
        cfg.encoder.d = 32;
        cfg.encoder.map_h = 8;
        cfg.encoder.map_w = 16;
        cfg.encoder.seed = 42;
        Stopwatch watch;
        state = init_train_state<float>(cfg);
        train(state, dataset, cfg.epochs, [this](const EpochLog& e) {
            if (e.epoch == 1) first_epoch_loss = e.total;
            final_epoch_loss = e.total;
        });
        train_seconds = watch.seconds();
        FeatureProvider<float> provider(dataset.grammar, state.config.encoder);
        report = evaluate_grounding(state.model, provider, dataset);
    }
};

const OverfitRun& overfit_run() {
    static OverfitRun run;
    return run;
}

}  // namespace

TEST_CASE("criterion 4: overfit reproduction of the training mechanism, < 5 min") {
    const OverfitRun& run = overfit_run();
    const bool loss_ok = run.final_epoch_loss < 0.25 * run.first_epoch_loss;
    const bool pos_ok =
        run.report.positive_total > 0 && run.report.positive_correct == run.report.positive_total;
    const bool neg_ok =
        run.report.negative_total > 0 && run.report.negative_correct == run.report.negative_total;
    const bool time_ok = run.train_seconds < 300.0;
    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "loss %.4f -> %.4f (ratio %.3f), pos %d/%d > 0.5, neg %d/%d < 0.5, %.0f s",
                  run.first_epoch_loss, run.final_epoch_loss,
                  run.final_epoch_loss / run.first_epoch_loss, run.report.positive_correct,
                  run.report.positive_total, run.report.negative_correct, run.report.negative_total,
                  run.train_seconds);
    report("criterion 4 overfit reproduction", loss_ok && pos_ok && neg_ok && time_ok, detail);
    CHECK(loss_ok);
    CHECK(pos_ok);
    CHECK(neg_ok);
    CHECK(time_ok);
}

TEST_CASE("criterion 5: counterfactual push/pull on the trained model") {
    const OverfitRun& run = overfit_run();
    const bool pull_ok = run.report.mean_positive_p > 0.5;
    const bool push_ok = run.report.mean_cf_p < 0.5;
    const bool above_ok =
        run.report.cf_pairs > 0 &&
        run.report.cf_true_above >= static_cast<int>(std::ceil(0.9 * run.report.cf_pairs));
    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "mean P(true) %.3f > 0.5, mean P(cf) %.3f < 0.5, true above cf %d/%d",
                  run.report.mean_positive_p, run.report.mean_cf_p, run.report.cf_true_above,
                  run.report.cf_pairs);
    report("criterion 5 counterfactual push/pull", pull_ok && push_ok && above_ok, detail);
    CHECK(pull_ok);
    CHECK(push_ok);
    CHECK(above_ok);
}

namespace {

// Fixed-seed regression fixture for the ablation direction. Training scenes
// make the coarse cue sufficient (objects differ in category), the held-out
// split is category-homogeneous so only fine attributes separate objects —
// the regime in which counterfactual supervision has something to teach.
SequenceData ablation_scene(const AttributeGrammar& g, const std::string& id, Rng& rng,
                            int n_objects, int n_frames, bool homogeneous,
                            const SceneGenParams& noise, int n_expressions, bool fine_expressions) {
    SequenceData seq;
    seq.sequence_id = id;
    const int cols = 5, rows = 3;
    std::vector<int> cells(static_cast<std::size_t>(cols) * rows);
    for (int i = 0; i < cols * rows; ++i) cells[static_cast<std::size_t>(i)] = i;
    rng.shuffle(cells);
    std::vector<GtObject> objects;
    std::vector<std::string> colors = g.vocab.at("color");
    rng.shuffle(colors);
    for (int i = 0; i < n_objects; ++i) {
        GtObject o;
        o.object_id = i + 1;
        const int cell = cells[static_cast<std::size_t>(i)];
        Box b;
        b.w = rng.uniform(0.09, 0.13);
        b.h = rng.uniform(0.12, 0.18);
        b.cx = (cell % cols + 0.5) / cols + rng.uniform(-0.02, 0.02);
        b.cy = (cell / cols + 0.5) / rows + rng.uniform(-0.03, 0.03);
        o.box = b;
        const auto& cats = g.vocab.at("category");
        const auto& motions = g.vocab.at("motion");
        o.attributes["category"] = homogeneous ? "car" : cats[static_cast<std::size_t>(i) % cats.size()];
        o.attributes["color"] = colors[static_cast<std::size_t>(i) % colors.size()];
        o.attributes["location"] = b.cx < 1.0 / 3 ? "left" : (b.cx < 2.0 / 3 ? "center" : "right");
        o.attributes["motion"] = motions[rng.uniform_index(motions.size())];
        objects.push_back(std::move(o));
    }
    std::set<std::string> used;
    for (int e = 0; e < n_expressions; ++e) {
        Expression ex;
        ex.id = "e" + std::to_string(e);
        for (int attempt = 0; attempt < 64; ++attempt) {
            const GtObject& target = objects[rng.uniform_index(objects.size())];
            std::map<std::string, std::string> attrs;
            attrs["category"] = target.attributes.at("category");
            if (fine_expressions) {
                attrs["color"] = target.attributes.at("color");
                if (rng.bernoulli(0.5)) attrs["location"] = target.attributes.at("location");
            } else {
                if (rng.bernoulli(0.5)) attrs["color"] = target.attributes.at("color");
                if (rng.bernoulli(0.3)) attrs["location"] = target.attributes.at("location");
                if (rng.bernoulli(0.2)) attrs["motion"] = target.attributes.at("motion");
            }
            const std::string text = g.render(attrs);
            if (used.count(text) && attempt + 1 < 64) continue;
            used.insert(text);
            ex.attributes = std::move(attrs);
            ex.text = text;
            break;
        }
        seq.expressions.push_back(std::move(ex));
    }
    for (int f = 0; f < n_frames; ++f) {
        SceneRecord rec;
        rec.sequence_id = id;
        rec.frame_id = f;
        rec.gt_objects = objects;
        rec.proposals = make_proposals(objects, g, noise, rng);
        for (auto& ex : seq.expressions) {
            std::set<int> pos;
            for (const auto& o : objects) {
                bool match = true;
                for (const auto& [slot, value] : ex.attributes)
                    if (o.attributes.at(slot) != value) match = false;
                if (match) pos.insert(o.object_id);
            }
            ex.positives[f] = pos;
            rec.positives[ex.id] = pos;
        }
        seq.frames.push_back(std::move(rec));
        for (auto& o : objects) o.box.cx += 0.002;
    }
    for (const auto& ex : seq.expressions) {
        Rng cf_rng = Rng::derive(hash64(id + ex.id), "cf");
        seq.counterfactuals[ex.id] = {perturb_expression(ex.text, ex.attributes, ex.id, g, cf_rng)};
    }
    return seq;
}

double ablation_hota(const Dataset& train_ds, const Dataset& test_ds, bool esi, bool cfl,
                     const std::string& tag) {
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.lr = 1e-3;
    cfg.n_queries = 5;
    cfg.seed = 42;
    cfg.esi_enabled = esi;
    cfg.cf_enabled = cfl;
    cfg.model.d = 16;
    cfg.model.heads = 2;
    cfg.model.deform_points = 2;
    cfg.encoder.d = 16;
    cfg.encoder.map_h = 8;
    cfg.encoder.map_w = 8;
    cfg.encoder.noise_sigma = 0.12;
    cfg.encoder.seed = 42;
    TrainState<float> state = init_train_state<float>(cfg);
    train(state, train_ds, cfg.epochs);
    FeatureProvider<float> provider(test_ds.grammar, state.config.encoder);
    TrackerConfig tk;
    TmpDir preds("abl_preds_" + tag);
    for (const auto& seq : test_ds.sequences)
        for (const auto& expr : seq.expressions)
            write_track_file(run_sequence(state.model, provider, seq, expr, tk),
                             preds.path + "/" + seq.sequence_id + "__" + expr.id + ".txt");
    return evaluate_benchmark(test_ds, preds.path).aggregate.hota;
}

}  // namespace

TEST_CASE("criterion 6: ablation direction on a held-out noisy split") {
    const std::uint64_t seed = 4242;
    AttributeGrammar grammar = AttributeGrammar::default_grammar();
    SceneGenParams train_noise;
    train_noise.caption_error_rate = 0.1;
    train_noise.box_jitter = 0.02;
    SceneGenParams heldout_noise;
    heldout_noise.caption_error_rate = 0.2;
    heldout_noise.box_jitter = 0.02;

    Dataset train_ds, test_ds;
    train_ds.grammar = grammar;
    test_ds.grammar = grammar;
    for (int s = 0; s < 120; ++s) {
        Rng rng = Rng::derive(seed, "train", static_cast<std::uint64_t>(s));
        train_ds.sequences.push_back(
            ablation_scene(grammar, "t" + std::to_string(s), rng, 4, 2, false, train_noise, 5, false));
    }
    for (int s = 0; s < 2; ++s) {
        Rng rng = Rng::derive(seed, "test", static_cast<std::uint64_t>(s));
        test_ds.sequences.push_back(
            ablation_scene(grammar, "h" + std::to_string(s), rng, 5, 20, true, heldout_noise, 6, true));
    }

    const double full = ablation_hota(train_ds, test_ds, true, true, "full");
    const double no_esi = ablation_hota(train_ds, test_ds, false, true, "noesi");
    const double no_cfl = ablation_hota(train_ds, test_ds, true, false, "nocfl");
    const double neither = ablation_hota(train_ds, test_ds, false, false, "none");

    const double tol = 0.005;  // the 0.5-point band
    const bool ok = full >= no_esi - tol && full >= no_cfl - tol && no_esi >= neither - tol &&
                    no_cfl >= neither - tol;
    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "HOTA full %.2f | w/o ESI %.2f | w/o CFL %.2f | w/o both %.2f (tolerance 0.5pt)",
                  full * 100, no_esi * 100, no_cfl * 100, neither * 100);
    report("criterion 6 ablation direction", ok, detail);
    CHECK(full >= no_esi - tol);
    CHECK(full >= no_cfl - tol);
    CHECK(no_esi >= neither - tol);
    CHECK(no_cfl >= neither - tol);
}

TEST_CASE("criterion 7: masked cells contribute exactly nothing") {
    // larger instance than the unit test: 5 proposals, 3 expressions
    AttributeGrammar grammar = AttributeGrammar::default_grammar();
    EncoderConfig ecfg;
    ecfg.d = 32;
    ecfg.map_h = 8;
    ecfg.map_w = 8;
    ecfg.noise_sigma = 0.1;
    ecfg.seed = 7;
    FeatureProvider<double> provider(grammar, ecfg);
    ModelConfig mcfg;
    mcfg.d = 32;
    HmsiModel<double> model = HmsiModel<double>::init(mcfg, 7);

    SceneRecord frame;
    frame.sequence_id = "m";
    frame.frame_id = 0;
    const char* colors[] = {"red", "white", "blue", "black", "silver"};
    for (int i = 0; i < 5; ++i) {
        GtObject o;
        o.object_id = i + 1;
        o.box = Box{0.1 + 0.18 * i, 0.5, 0.12, 0.25};
        o.attributes = {{"category", i % 2 ? "van" : "car"},
                        {"color", colors[i]},
                        {"location", i < 2 ? "left" : (i < 4 ? "center" : "right")},
                        {"motion", "moving"}};
        frame.gt_objects.push_back(o);
        frame.proposals.push_back({o.box, grammar.render(o.attributes), 0.9});
    }
    FrameInputs<double> inputs;
    inputs.visual = provider.encode_frame(frame).features;
    for (const auto& p : frame.proposals) {
        inputs.boxes.push_back(p.box);
        inputs.captions.push_back(provider.encode_text(p.caption));
    }
    std::vector<std::pair<int, Box>> gt;
    for (const auto& o : frame.gt_objects) gt.emplace_back(o.object_id, o.box);
    const auto label_map = assign_labels(inputs.boxes, gt, 0.5);

    std::vector<Expression> exprs(3);
    std::vector<CounterfactualQuery> cfs;
    std::vector<const Expression*> ptrs;
    const std::map<std::string, std::string> attr_sets[3] = {
        {{"category", "car"}, {"color", "red"}},
        {{"category", "van"}},
        {{"category", "car"}, {"motion", "moving"}}};
    for (int e = 0; e < 3; ++e) {
        exprs[static_cast<std::size_t>(e)].id = "q" + std::to_string(e);
        exprs[static_cast<std::size_t>(e)].attributes = attr_sets[e];
        exprs[static_cast<std::size_t>(e)].text = grammar.render(attr_sets[e]);
        std::set<int> pos;
        for (const auto& o : frame.gt_objects) {
            bool match = true;
            for (const auto& [slot, value] : attr_sets[e])
                if (o.attributes.at(slot) != value) match = false;
            if (match) pos.insert(o.object_id);
        }
        frame.positives[exprs[static_cast<std::size_t>(e)].id] = pos;
        ptrs.push_back(&exprs[static_cast<std::size_t>(e)]);
        Rng rng(hash64(exprs[static_cast<std::size_t>(e)].text));
        cfs.push_back(perturb_expression(exprs[static_cast<std::size_t>(e)].text,
                                         exprs[static_cast<std::size_t>(e)].attributes,
                                         exprs[static_cast<std::size_t>(e)].id, grammar, rng));
    }
    const QueryBatchPlan plan = build_query_batch(frame, ptrs, cfs, label_map);

    ParamRefs<double> refs = model.param_refs();
    Tape<double> t1;
    bind_params(t1, refs);
    const LossBreakdown<double> skip = frame_objective(model, inputs, provider, plan, true, false);
    const GradMap<double> g1 = backward(t1, skip.total, refs);

    Tape<double> t2;
    bind_params(t2, refs);
    const LossBreakdown<double> full = frame_objective(model, inputs, provider, plan, true, true);
    const GradMap<double> g2 = backward(t2, full.total, refs);

    bool loss_equal = std::memcmp(&skip.total.data()[0], &full.total.data()[0], sizeof(double)) == 0;
    bool grads_equal = g1.size() == g2.size();
    std::size_t grad_values = 0;
    for (const auto& [name, grad] : g1) {
        const auto& other = g2.at(name);
        grad_values += grad.numel();
        if (grad.numel() != other.numel() ||
            std::memcmp(grad.data().data(), other.data().data(), grad.numel() * sizeof(double)) != 0)
            grads_equal = false;
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail), "loss bit-equal %s, %zu gradient values bit-equal %s",
                  loss_equal ? "yes" : "no", grad_values, grads_equal ? "yes" : "no");
    report("criterion 7 masking exactness", loss_equal && grads_equal, detail);
    CHECK(loss_equal);
    CHECK(grads_equal);
}

TEST_CASE("criterion 8: tracker conformance to the published thresholds") {
    // stage separation on synthetic detections across many frames
    TrackerConfig cfg;
    Rng rng(88);
    std::vector<Track> tracks;
    int next_id = 1;
    bool low_never_emitted = true;
    for (int f = 0; f < 40; ++f) {
        std::vector<Detection> dets;
        const int n = 1 + static_cast<int>(rng.uniform_index(5));
        for (int i = 0; i < n; ++i) {
            Detection d;
            d.box = Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.12};
            d.semantic_score = rng.uniform();
            d.frame_id = f;
            dets.push_back(d);
        }
        for (auto& t : tracks)
            if (t.status != TrackStatus::removed) t.kalman = kalman_predict(t.kalman);
        associate_step(tracks, dets, cfg, next_id, f == 0);
        for (const auto& t : tracks)
            if (t.updated_this_frame && t.last_score < cfg.tau_low) low_never_emitted = false;
    }

    // single noiseless object: one id, byte-identical repeat runs
    AttributeGrammar grammar = AttributeGrammar::default_grammar();
    EncoderConfig ecfg;
    ecfg.d = 16;
    ecfg.map_h = 8;
    ecfg.map_w = 8;
    ecfg.seed = 9;
    FeatureProvider<float> provider(grammar, ecfg);
    ModelConfig mcfg;
    mcfg.d = 16;
    mcfg.heads = 2;
    mcfg.deform_points = 2;
    HmsiModel<float> model = HmsiModel<float>::init(mcfg, 9);
    SequenceData seq;
    seq.sequence_id = "s";
    Expression expr;
    expr.id = "e0";
    expr.text = "the car";
    expr.attributes = {{"category", "car"}};
    for (int f = 0; f < 15; ++f) {
        SceneRecord rec;
        rec.sequence_id = "s";
        rec.frame_id = f;
        GtObject o;
        o.object_id = 1;
        o.box = Box{0.3 + 0.004 * f, 0.5, 0.15, 0.2};
        o.attributes = {{"category", "car"}, {"color", "red"}, {"location", "center"},
                        {"motion", "moving"}};
        rec.gt_objects.push_back(o);
        rec.proposals.push_back({o.box, grammar.render(o.attributes), 0.95});
        rec.positives["e0"] = {1};
        expr.positives[f] = {1};
        seq.frames.push_back(rec);
    }
    seq.expressions.push_back(expr);
    const auto r1 = run_sequence(model, provider, seq, expr, cfg);
    const auto r2 = run_sequence(model, provider, seq, expr, cfg);
    std::set<int> ids;
    for (const auto& r : r1) ids.insert(r.track_id);
    const bool one_id = ids.size() == 1;
    const bool byte_identical = format_track_records(r1) == format_track_records(r2);
    const bool defaults_ok = cfg.tau_high == 0.4 && cfg.tau_low == 0.1 && cfg.epsilon == 0.4;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "no sub-tau_low emissions %s, single id %s, repeat byte-identical %s",
                  low_never_emitted ? "yes" : "no", one_id ? "yes" : "no",
                  byte_identical ? "yes" : "no");
    report("criterion 8 tracker conformance", low_never_emitted && one_id && byte_identical && defaults_ok,
           detail);
    CHECK(low_never_emitted);
    CHECK(one_id);
    CHECK(byte_identical);
    CHECK(defaults_ok);
}

TEST_CASE("criterion 9: end-to-end determinism through the CLI surface") {
    TmpDir tmp("det");
    RunConfig cfg = RunConfig::defaults();
    cfg.set("data.frames", "6");
    cfg.set("data.objects", "3");
    cfg.set("data.expressions", "4");
    cfg.set("model.d", "16");
    cfg.set("model.heads", "2");
    cfg.set("model.deform_points", "2");
    cfg.set("encoder.map_h", "8");
    cfg.set("encoder.map_w", "8");
    cfg.set("train.epochs", "3");
    cfg.set("train.n_queries", "4");
    cfg.set("train.seed", "42");

    REQUIRE(cmd_gen_data(cfg, tmp.path + "/data") == 0);
    REQUIRE(cmd_train(cfg, tmp.path + "/data", tmp.path + "/a.coal", false) == 0);
    REQUIRE(cmd_train(cfg, tmp.path + "/data", tmp.path + "/b.coal", false) == 0);
    const bool ckpt_equal = file_bytes(tmp.path + "/a.coal") == file_bytes(tmp.path + "/b.coal");
    const bool log_equal =
        file_bytes(tmp.path + "/a.coal.log.jsonl") == file_bytes(tmp.path + "/b.coal.log.jsonl");

    REQUIRE(cmd_track(cfg, tmp.path + "/a.coal", tmp.path + "/data", tmp.path + "/p1", "") == 0);
    REQUIRE(cmd_track(cfg, tmp.path + "/a.coal", tmp.path + "/data", tmp.path + "/p2", "") == 0);
    bool preds_equal = true;
    for (const auto& entry : fs::directory_iterator(tmp.path + "/p1")) {
        if (entry.path().extension() != ".txt") continue;
        const std::string other = tmp.path + "/p2/" + entry.path().filename().string();
        if (!fs::exists(other) || file_bytes(entry.path().string()) != file_bytes(other))
            preds_equal = false;
    }

    // f64 mode: the cross-platform reference precision
    RunConfig cfg64 = cfg;
    cfg64.set("train.precision", "\"f64\"");
    cfg64.set("train.epochs", "2");
    REQUIRE(cmd_train(cfg64, tmp.path + "/data", tmp.path + "/c64.coal", false) == 0);
    REQUIRE(cmd_train(cfg64, tmp.path + "/data", tmp.path + "/d64.coal", false) == 0);
    const bool f64_equal = file_bytes(tmp.path + "/c64.coal") == file_bytes(tmp.path + "/d64.coal");
    const bool f64_dtype = checkpoint_dtype(tmp.path + "/c64.coal") == 1;

    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "checkpoints %s, loss logs %s, predictions %s, f64 checkpoints %s",
                  ckpt_equal ? "equal" : "DIFFER", log_equal ? "equal" : "DIFFER",
                  preds_equal ? "equal" : "DIFFER", f64_equal ? "equal" : "DIFFER");
    report("criterion 9 determinism", ckpt_equal && log_equal && preds_equal && f64_equal && f64_dtype,
           detail);
    CHECK(ckpt_equal);
    CHECK(log_equal);
    CHECK(preds_equal);
    CHECK(f64_equal);
    CHECK(f64_dtype);
}
