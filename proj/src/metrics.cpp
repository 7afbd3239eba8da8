// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace coal {

const std::vector<double>& hota_alphas() {
    static const std::vector<double> alphas = [] {
        std::vector<double> a;
        for (int i = 1; i <= 19; ++i) a.push_back(0.05 * i);
        return a;
    }();
    return alphas;
}

FrameMatch match_frame(const FrameObjects& gt, const FrameObjects& pred, double alpha) {
    if (alpha <= 0.0 || alpha >= 1.0) throw std::invalid_argument("match_frame: alpha must lie in (0,1)");
    {
        std::set<int> seen;
        for (int id : gt.ids)
            if (!seen.insert(id).second)
                throw ValidationError("match_frame: duplicate gt id " + std::to_string(id));
        seen.clear();
        for (int id : pred.ids)
            if (!seen.insert(id).second)
                throw ValidationError("match_frame: duplicate prediction id " + std::to_string(id));
    }
    FrameMatch out;
    const int ng = static_cast<int>(gt.ids.size());
    const int np = static_cast<int>(pred.ids.size());
    if (ng == 0 || np == 0) {
        out.fn = ng;
        out.fp = np;
        return out;
    }
    CostMatrix costs(ng, np);
    for (int g = 0; g < ng; ++g)
        for (int p = 0; p < np; ++p) {
            const double v = iou(gt.boxes[static_cast<std::size_t>(g)], pred.boxes[static_cast<std::size_t>(p)]);
            if (v >= alpha)
                costs.at(g, p) = v;
            else
                costs.forbid(g, p);
        }
    const AssignmentResult res = linear_assignment(costs, /*maximize=*/true);
    for (const auto& [g, p] : res.pairs) out.tp.push_back({g, p, costs.at(g, p)});
    out.fn = ng - static_cast<int>(out.tp.size());
    out.fp = np - static_cast<int>(out.tp.size());
    return out;
}

HotaResult hota(const TrackSequence& gt, const TrackSequence& pred) {
    HotaResult out;

    // union of frames, with empty sides filled in
    std::set<int> frames;
    for (const auto& [f, v] : gt) {
        (void)v;
        frames.insert(f);
    }
    for (const auto& [f, v] : pred) {
        (void)v;
        frames.insert(f);
    }

    std::map<int, long long> gt_appearances, pred_appearances;
    for (const auto& [f, objs] : gt) {
        (void)f;
        for (int id : objs.ids) gt_appearances[id] += 1;
    }
    for (const auto& [f, objs] : pred) {
        (void)f;
        for (int id : objs.ids) pred_appearances[id] += 1;
    }

    const FrameObjects empty_frame;
    for (double alpha : hota_alphas()) {
        long long tp = 0, fp = 0, fn = 0;
        double iou_sum = 0.0;
        std::map<std::pair<int, int>, long long> pair_counts;  // (gt id, pred id) -> TPA
        std::vector<std::pair<int, int>> tp_pairs;             // one entry per TP instance

        for (int f : frames) {
            auto git = gt.find(f);
            auto pit = pred.find(f);
            const FrameObjects& g = git != gt.end() ? git->second : empty_frame;
            const FrameObjects& p = pit != pred.end() ? pit->second : empty_frame;
            const FrameMatch m = match_frame(g, p, alpha);
            tp += static_cast<long long>(m.tp.size());
            fp += m.fp;
            fn += m.fn;
            for (const auto& t : m.tp) {
                iou_sum += t.iou;
                const std::pair<int, int> key{g.ids[static_cast<std::size_t>(t.gt)],
                                              p.ids[static_cast<std::size_t>(t.pred)]};
                pair_counts[key] += 1;
                tp_pairs.push_back(key);
            }
        }

        HotaResult::PerAlpha pa;
        pa.alpha = alpha;
        pa.tp = tp;
        pa.fp = fp;
        pa.fn = fn;
        if (tp + fn + fp == 0) {
            pa.deta = pa.assa = pa.detre = pa.detpr = pa.assre = pa.asspr = pa.loca = 1.0;
        } else {
            pa.deta = static_cast<double>(tp) / static_cast<double>(tp + fn + fp);
            pa.detre = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
            pa.detpr = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0;
            if (tp == 0) {
                pa.assa = pa.assre = pa.asspr = 0.0;
                pa.loca = 1.0;  // vacuous mean over zero TPs
            } else {
                double assa_sum = 0, assre_sum = 0, asspr_sum = 0;
                for (const auto& key : tp_pairs) {
                    const long long tpa = pair_counts[key];
                    const long long fna = gt_appearances[key.first] - tpa;
                    const long long fpa = pred_appearances[key.second] - tpa;
                    assa_sum += static_cast<double>(tpa) / static_cast<double>(tpa + fna + fpa);
                    assre_sum += static_cast<double>(tpa) / static_cast<double>(tpa + fna);
                    asspr_sum += static_cast<double>(tpa) / static_cast<double>(tpa + fpa);
                }
                pa.assa = assa_sum / static_cast<double>(tp);
                pa.assre = assre_sum / static_cast<double>(tp);
                pa.asspr = asspr_sum / static_cast<double>(tp);
                pa.loca = iou_sum / static_cast<double>(tp);
            }
        }
        out.per_alpha.push_back(pa);
    }

    const double n = static_cast<double>(out.per_alpha.size());
    for (const auto& pa : out.per_alpha) {
        out.hota += std::sqrt(pa.deta * pa.assa) / n;
        out.deta += pa.deta / n;
        out.assa += pa.assa / n;
        out.detre += pa.detre / n;
        out.detpr += pa.detpr / n;
        out.assre += pa.assre / n;
        out.asspr += pa.asspr / n;
        out.loca += pa.loca / n;
    }
    return out;
}

TrackSequence gt_sequence_for(const SequenceData& sequence, const Expression& expression) {
    TrackSequence out;
    for (const auto& frame : sequence.frames) {
        FrameObjects objs;
        auto pit = expression.positives.find(frame.frame_id);
        if (pit != expression.positives.end()) {
            for (const auto& obj : frame.gt_objects)
                if (pit->second.count(obj.object_id)) {
                    objs.ids.push_back(obj.object_id);
                    objs.boxes.push_back(obj.box);
                }
        }
        out[frame.frame_id] = std::move(objs);
    }
    return out;
}

TrackSequence prediction_sequence(const std::vector<TrackRecord>& records) {
    TrackSequence out;
    for (const auto& r : records) {
        FrameObjects& objs = out[r.frame_id];
        objs.ids.push_back(r.track_id);
        objs.boxes.push_back(r.box);
    }
    return out;
}

namespace {

void accumulate(HotaResult& acc, const HotaResult& r, double weight) {
    acc.hota += r.hota * weight;
    acc.deta += r.deta * weight;
    acc.assa += r.assa * weight;
    acc.detre += r.detre * weight;
    acc.detpr += r.detpr * weight;
    acc.assre += r.assre * weight;
    acc.asspr += r.asspr * weight;
    acc.loca += r.loca * weight;
}

}  // namespace

BenchmarkReport evaluate_benchmark(const Dataset& dataset, const std::string& predictions_dir) {
    BenchmarkReport report;
    report.header_note =
        "frame matching: per-alpha optimal IoU assignment (not the two-pass "
        "reference alignment); LocA averaged over alpha";
    for (const auto& seq : dataset.sequences) {
        for (const auto& expr : seq.expressions) {
            ExpressionEval row;
            row.sequence_id = seq.sequence_id;
            row.expression_id = expr.id;
            const std::string path =
                predictions_dir + "/" + seq.sequence_id + "__" + expr.id + ".txt";
            std::vector<TrackRecord> records;
            if (fs::exists(path)) {
                records = read_track_file(path);
            } else {
                row.missing_prediction = true;
            }
            row.result = hota(gt_sequence_for(seq, expr), prediction_sequence(records));
            report.rows.push_back(std::move(row));
        }
    }
    if (!report.rows.empty()) {
        const double w = 1.0 / static_cast<double>(report.rows.size());
        for (const auto& row : report.rows) accumulate(report.aggregate, row.result, w);
    }
    return report;
}

namespace {

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%6.2f", v * 100.0);
    return buf;
}

json result_json(const HotaResult& r) {
    return json{{"HOTA", r.hota},   {"DetA", r.deta},   {"AssA", r.assa},
                {"DetRe", r.detre}, {"DetPr", r.detpr}, {"AssRe", r.assre},
                {"AssPr", r.asspr}, {"LocA", r.loca}};
}

}  // namespace

std::string format_report_table(const BenchmarkReport& report) {
    std::string out = "# " + report.header_note + "\n";
    out += "sequence   expression   HOTA   DetA   AssA  DetRe  DetPr  AssRe  AssPr   LocA\n";
    char buf[256];
    for (const auto& row : report.rows) {
        const auto& r = row.result;
        std::snprintf(buf, sizeof(buf), "%-10s %-10s %s %s %s %s %s %s %s %s%s\n",
                      row.sequence_id.c_str(), row.expression_id.c_str(), pct(r.hota).c_str(),
                      pct(r.deta).c_str(), pct(r.assa).c_str(), pct(r.detre).c_str(),
                      pct(r.detpr).c_str(), pct(r.assre).c_str(), pct(r.asspr).c_str(),
                      pct(r.loca).c_str(), row.missing_prediction ? "  [missing prediction]" : "");
        out += buf;
    }
    const auto& a = report.aggregate;
    std::snprintf(buf, sizeof(buf), "%-10s %-10s %s %s %s %s %s %s %s %s\n", "aggregate", "",
                  pct(a.hota).c_str(), pct(a.deta).c_str(), pct(a.assa).c_str(), pct(a.detre).c_str(),
                  pct(a.detpr).c_str(), pct(a.assre).c_str(), pct(a.asspr).c_str(), pct(a.loca).c_str());
    out += buf;
    return out;
}

std::string format_report_json(const BenchmarkReport& report) {
    std::string out;
    for (const auto& row : report.rows) {
        json j = result_json(row.result);
        j["sequence_id"] = row.sequence_id;
        j["expression_id"] = row.expression_id;
        if (row.missing_prediction) j["missing_prediction"] = true;
        out += j.dump() + "\n";
    }
    json agg = result_json(report.aggregate);
    agg["aggregate"] = true;
    agg["note"] = report.header_note;
    out += agg.dump() + "\n";
    return out;
}

}  // namespace coal
