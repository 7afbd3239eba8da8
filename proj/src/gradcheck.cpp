// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/gradcheck.hpp"

#include <cmath>

#include "coal/losses.hpp"

namespace coal {

double GradChecker::check(const std::vector<Tensor<double>*>& leaves,
                          const std::function<Tensor<double>()>& loss_fn) const {
    std::vector<Tensor<double>> grads;
    {
        Tape<double> tape;
        for (auto* l : leaves) tape.watch(*l);
        Tensor<double> loss = loss_fn();
        tape.backward(loss);
        for (auto* l : leaves) grads.push_back(tape.grad(*l));
    }
    double max_rel = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li]->mutable_data();
        const auto& g = grads[li].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + step;
            const double f_plus = loss_fn().value();
            data[i] = orig - step;
            const double f_minus = loss_fn().value();
            data[i] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * step);
            const double rel = std::fabs(fd - g[i]) / std::max({std::fabs(fd), std::fabs(g[i]), 0.01});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::size_t n = Tensor<double>::numel_from_shape(shape);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(v));
}

// fixed random projection so reductions do not cancel symmetric errors
Tensor<double> probed_sum(const Tensor<double>& value, const Tensor<double>& probe) {
    return sum_all(mul(value, probe));
}

struct CaseBuilder {
    std::vector<GradCheckResult>& out;
    GradChecker checker;

    void add(const std::string& name, const std::vector<Tensor<double>*>& leaves,
             const std::function<Tensor<double>()>& loss_fn) {
        GradCheckResult r;
        r.name = name;
        r.max_rel_err = checker.check(leaves, loss_fn);
        r.pass = r.max_rel_err <= checker.tol;
        out.push_back(std::move(r));
    }
};

}  // namespace

std::vector<GradCheckResult> run_standard_gradchecks() {
    std::vector<GradCheckResult> results;
    CaseBuilder cb{results, GradChecker{}};
    Rng rng(20260808);

    {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({3, 4}, rng);
        auto p = random_tensor({3, 4}, rng);
        cb.add("add", {&a, &b}, [&] { return probed_sum(add(a, b), p); });
        cb.add("sub", {&a, &b}, [&] { return probed_sum(sub(a, b), p); });
        cb.add("mul", {&a, &b}, [&] { return probed_sum(mul(a, b), p); });
        cb.add("scale", {&a}, [&] { return probed_sum(scale(a, 1.7), p); });
        cb.add("add_scalar", {&a}, [&] { return probed_sum(add_scalar(a, 0.3), p); });
    }
    {
        auto a = random_tensor({4, 3}, rng);
        auto bias = random_tensor({3}, rng);
        auto p = random_tensor({4, 3}, rng);
        cb.add("add_bias", {&a, &bias}, [&] { return probed_sum(add_bias(a, bias), p); });
    }
    {
        auto a = random_tensor({3, 5}, rng);
        auto b = random_tensor({5, 4}, rng);
        auto p = random_tensor({3, 4}, rng);
        cb.add("matmul", {&a, &b}, [&] { return probed_sum(matmul(a, b), p); });
        auto bt = random_tensor({4, 5}, rng);
        cb.add("matmul_nt", {&a, &bt}, [&] { return probed_sum(matmul_nt(a, bt), p); });
    }
    {
        auto a = random_tensor({4, 6}, rng);
        auto p = random_tensor({4, 6}, rng);
        cb.add("softmax_rows", {&a}, [&] { return probed_sum(softmax(a, 1), p); });
        cb.add("softmax_cols", {&a}, [&] { return probed_sum(softmax(a, 0), p); });
        auto v = random_tensor({5}, rng);
        auto pv = random_tensor({5}, rng);
        cb.add("softmax_vec", {&v}, [&] { return probed_sum(softmax(v, 0), pv); });
    }
    {
        auto a = random_tensor({5, 4}, rng);
        auto pr = random_tensor({2, 4}, rng);
        auto pc = random_tensor({5, 2}, rng);
        cb.add("slice_rows", {&a}, [&] { return probed_sum(slice_rows(a, 1, 2), pr); });
        cb.add("slice_cols", {&a}, [&] { return probed_sum(slice_cols(a, 1, 2), pc); });
        auto pg = random_tensor({4, 4}, rng);
        const std::vector<int> idx = {3, 0, 0, 2};
        cb.add("gather_rows", {&a}, [&] { return probed_sum(gather_rows(a, idx), pg); });
    }
    {
        auto a = random_tensor({2, 3}, rng);
        auto b = random_tensor({3, 3}, rng);
        auto p = random_tensor({5, 3}, rng);
        cb.add("concat_rows", {&a, &b}, [&] {
            return probed_sum(concat_rows<double>({a, b}), p);
        });
        auto c = random_tensor({2, 2}, rng);
        auto pc = random_tensor({2, 5}, rng);
        cb.add("concat_cols", {&a, &c}, [&] {
            return probed_sum(concat_cols<double>({a, c}), pc);
        });
    }
    {
        auto a = random_tensor({5, 7, 3}, rng);
        auto p = random_tensor({3, 4, 3}, rng);
        cb.add("avg_pool2", {&a}, [&] { return probed_sum(avg_pool2(a), p); });
    }
    {
        auto map = random_tensor({6, 5, 3}, rng);
        // interior off-grid points so the bilinear kinks stay away
        Tensor<double> pts({3, 2}, {0.23, 0.37, 0.61, 0.72, 0.45, 0.18});
        auto p = random_tensor({3, 3}, rng);
        cb.add("grid_sample", {&map, &pts}, [&] { return probed_sum(grid_sample(map, pts), p); });
        Tensor<double> pt({2}, {0.33, 0.57});
        auto pd = random_tensor({3}, rng);
        cb.add("bilinear_sample", {&map, &pt}, [&] { return probed_sum(bilinear_sample(map, pt), pd); });
    }
    {
        auto u = random_tensor({6}, rng);
        auto v = random_tensor({6}, rng);
        cb.add("cosine_similarity", {&u, &v}, [&] { return cosine_similarity(u, v); });
    }
    {
        auto a = random_tensor({3, 3}, rng);
        cb.add("sum_all", {&a}, [&] { return sum_all(a); });
        cb.add("mean_all", {&a}, [&] { return mean_all(a); });
        auto pos = random_tensor({4}, rng, 0.2, 1.5);
        auto pp = random_tensor({4}, rng);
        cb.add("log", {&pos}, [&] { return probed_sum(log(pos), pp); });
        auto mid = random_tensor({4}, rng, 0.2, 0.8);
        cb.add("clamp", {&mid}, [&] { return probed_sum(clamp(mid, 0.0, 1.0), pp); });
    }
    {
        auto q = random_tensor({3, 8}, rng);
        auto k = random_tensor({4, 8}, rng);
        auto v = random_tensor({4, 8}, rng);
        auto p = random_tensor({3, 8}, rng);
        cb.add("attention_core", {&q, &k, &v}, [&] {
            return probed_sum(attention_core(q, k, v, 2), p);
        });
        MhcaParams<double> mp;
        Rng prng = Rng::derive(7, "gradcheck.mhca");
        init_mhca(mp, 8, prng);
        std::vector<Tensor<double>*> leaves = {&q, &k, &v};
        mp.visit("mhca", [&leaves](const std::string&, Tensor<double>& t) { leaves.push_back(&t); });
        cb.add("multi_head_cross_attention", leaves, [&] {
            return probed_sum(multi_head_cross_attention(q, k, v, mp, 2), p);
        });
    }

    // composite HMSI blocks on a tiny model
    const ModelConfig tiny = [] {
        ModelConfig c;
        c.d = 8;
        c.heads = 2;
        c.levels = 4;
        c.deform_points = 2;
        c.bifusion_layers = 1;
        return c;
    }();
    HmsiModel<double> model = HmsiModel<double>::init(tiny, 11);
    std::vector<Tensor<double>*> model_leaves;
    model.params.visit("hmsi", [&model_leaves](const std::string&, Tensor<double>& t) {
        model_leaves.push_back(&t);
    });
    {
        auto fv = random_tensor({6, 8}, rng);
        auto words = random_tensor({3, 8}, rng);
        auto pv = random_tensor({6, 8}, rng);
        auto pw = random_tensor({3, 8}, rng);
        std::vector<Tensor<double>*> leaves = {&fv, &words};
        for (auto* t : model_leaves) leaves.push_back(t);
        cb.add("bi_fusion", leaves, [&] {
            auto g = bi_fusion(fv, words, model.params.bifusion, tiny.heads);
            return add(probed_sum(g.visual, pv), probed_sum(g.words, pw));
        });
    }
    {
        auto map = random_tensor({8, 8, 8}, rng);
        auto p0 = random_tensor({1, 8}, rng);
        std::vector<Tensor<double>*> leaves = {&map};
        for (auto* t : model_leaves) leaves.push_back(t);
        Box box{0.47, 0.53, 0.3, 0.4};
        cb.add("build_pyramid+deform_sample", leaves, [&] {
            auto pyr = build_pyramid(map, model.params.pyramid_proj);
            return probed_sum(deform_sample(pyr, box, model.params.deform, tiny.heads, tiny.deform_points),
                              p0);
        });
    }
    {
        auto rs = random_tensor({1, 8}, rng);
        auto words = random_tensor({3, 8}, rng);
        auto words_vl = random_tensor({3, 8}, rng);
        auto p = random_tensor({1, 8}, rng);
        std::vector<Tensor<double>*> leaves = {&rs, &words, &words_vl};
        for (auto* t : model_leaves) leaves.push_back(t);
        cb.add("refer_aggregate", leaves, [&] {
            return probed_sum(refer_aggregate(rs, words, words_vl, model.params.refer_agg, tiny.heads), p);
        });
        auto cw = random_tensor({4, 8}, rng);
        auto pcw = random_tensor({4, 8}, rng);
        cb.add("caption_filter", leaves, [&] {
            return probed_sum(caption_filter(cw, words, words_vl, model.params.caption_filter, tiny.heads),
                              pcw);
        });
        auto cs = random_tensor({1, 8}, rng);
        auto cwvl = random_tensor({4, 8}, rng);
        std::vector<Tensor<double>*> agg_leaves = {&cs, &cw, &cwvl};
        for (auto* t : model_leaves) agg_leaves.push_back(t);
        cb.add("caption_aggregate", agg_leaves, [&] {
            return probed_sum(caption_aggregate(cs, cw, cwvl, model.params.caption_agg, tiny.heads), p);
        });
    }
    {
        auto ov = random_tensor({1, 8}, rng);
        auto oc = random_tensor({1, 8}, rng);
        auto op = random_tensor({1, 8}, rng);
        auto p = random_tensor({1, 8}, rng);
        std::vector<Tensor<double>*> leaves = {&ov, &oc, &op, &model.params.fuse.weight,
                                               &model.params.fuse.bias};
        cb.add("holistic_project", leaves, [&] {
            return probed_sum(holistic_project(ov, oc, op, model.params.fuse), p);
        });
    }
    {
        auto s = random_tensor({1}, rng, -0.8, 0.8);
        cb.add("to_probability", {&s}, [&] { return to_probability(s); });
        auto s2 = random_tensor({1}, rng, -0.8, 0.8);
        cb.add("bce_losses", {&s, &s2}, [&] {
            std::vector<Tensor<double>> probs = {to_probability(s), to_probability(s2)};
            Tensor<double> lm = main_loss(probs, {1, 0});
            Tensor<double> lcf = cf_loss(std::vector<Tensor<double>>{probs[1]});
            return add(lm, lcf);
        });
    }

    // end-to-end: tiny frame through the full objective
    {
        AttributeGrammar grammar = AttributeGrammar::default_grammar();
        EncoderConfig ecfg;
        ecfg.d = 8;
        ecfg.map_h = 8;
        ecfg.map_w = 8;
        ecfg.noise_sigma = 0.05;
        ecfg.seed = 3;
        FeatureProvider<double> provider(grammar, ecfg);

        SceneRecord frame;
        frame.sequence_id = "g";
        frame.frame_id = 0;
        GtObject o1{1, Box{0.3, 0.4, 0.25, 0.3}, {{"category", "car"}, {"color", "red"},
                                                   {"location", "left"}, {"motion", "moving"}}};
        GtObject o2{2, Box{0.7, 0.6, 0.2, 0.25}, {{"category", "van"}, {"color", "white"},
                                                   {"location", "right"}, {"motion", "parked"}}};
        frame.gt_objects = {o1, o2};
        frame.proposals.push_back({o1.box, "the red car on the left", 0.9});
        frame.proposals.push_back({o2.box, "the white van on the right", 0.9});
        frame.positives["e0"] = {1};

        Expression expr;
        expr.id = "e0";
        expr.text = "the red car";  // 3 tokens
        expr.attributes = {{"category", "car"}, {"color", "red"}};

        CounterfactualQuery cf;
        cf.source_expression_id = "e0";
        cf.perturbed_slot = "color";
        cf.original_value = "red";
        cf.new_value = "blue";
        cf.text = "the blue car";

        FrameInputs<double> inputs;
        inputs.visual = provider.encode_frame(frame).features;
        for (const auto& p : frame.proposals) {
            inputs.boxes.push_back(p.box);
            inputs.captions.push_back(provider.encode_text(p.caption));
        }
        std::vector<std::pair<int, Box>> gt;
        for (const auto& o : frame.gt_objects) gt.emplace_back(o.object_id, o.box);
        const auto label_map = assign_labels(inputs.boxes, gt, 0.5);
        const QueryBatchPlan plan = build_query_batch(frame, {&expr}, {cf}, label_map);

        cb.add("hmsi_end_to_end", model_leaves, [&] {
            return frame_objective(model, inputs, provider, plan, true).total;
        });
    }

    return results;
}

}  // namespace coal
