// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/priors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace coal {

namespace {

constexpr double kMinBoxSide = 0.01;

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

Box clamp_box(Box b) {
    b.w = std::max(b.w, kMinBoxSide);
    b.h = std::max(b.h, kMinBoxSide);
    b.w = std::min(b.w, 1.0);
    b.h = std::min(b.h, 1.0);
    b.cx = std::min(std::max(b.cx, b.w / 2.0), 1.0 - b.w / 2.0);
    b.cy = std::min(std::max(b.cy, b.h / 2.0), 1.0 - b.h / 2.0);
    return b;
}

}  // namespace

AttributeGrammar AttributeGrammar::default_grammar() {
    AttributeGrammar g;
    g.slots = {"category", "color", "location", "motion"};
    g.vocab["category"] = {"car", "van", "person", "cyclist"};
    g.vocab["color"] = {"red", "white", "black", "silver", "blue"};
    g.vocab["location"] = {"left", "right", "center"};
    g.vocab["motion"] = {"moving", "parked", "turning"};
    g.templates["category"] = "the {category}";
    g.templates["category+color"] = "the {color} {category}";
    g.templates["category+location"] = "the {category} on the {location}";
    g.templates["category+motion"] = "the {category} that is {motion}";
    g.templates["category+color+location"] = "the {color} {category} on the {location}";
    g.templates["category+color+motion"] = "the {color} {category} that is {motion}";
    g.templates["category+location+motion"] = "the {category} on the {location} that is {motion}";
    g.templates["category+color+location+motion"] =
        "the {color} {category} on the {location} that is {motion}";
    return g;
}

void AttributeGrammar::validate() const {
    if (slots.empty()) throw ValidationError("grammar: no slots");
    std::set<std::string> seen;
    std::set<std::string> template_words;
    for (const auto& [key, tpl] : templates) {
        (void)key;
        for (const auto& tok : split_ws(tpl))
            if (tok.front() != '{') template_words.insert(tok);
    }
    for (const auto& slot : slots) {
        auto it = vocab.find(slot);
        if (it == vocab.end()) throw ValidationError("grammar: slot without vocabulary: " + slot);
        if (it->second.size() < 2)
            throw ValidationError("grammar: slot vocabulary needs >= 2 values: " + slot);
        for (const auto& v : it->second) {
            if (!seen.insert(v).second)
                throw ValidationError("grammar: value appears in two slots: " + v);
            if (template_words.count(v))
                throw ValidationError("grammar: value collides with a template word: " + v);
            if (split_ws(v).size() != 1)
                throw ValidationError("grammar: slot values must be single words: " + v);
        }
    }
}

std::string AttributeGrammar::subset_key(const std::map<std::string, std::string>& attributes) {
    std::string key;
    for (const auto& [slot, value] : attributes) {
        (void)value;
        if (!key.empty()) key += '+';
        key += slot;
    }
    return key;
}

std::string AttributeGrammar::render(const std::map<std::string, std::string>& attributes) const {
    const std::string key = subset_key(attributes);
    auto it = templates.find(key);
    if (it == templates.end()) throw ValidationError("grammar: no template for slot set: " + key);
    std::string out;
    for (const auto& tok : split_ws(it->second)) {
        if (!out.empty()) out += ' ';
        if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
            const std::string slot = tok.substr(1, tok.size() - 2);
            auto at = attributes.find(slot);
            if (at == attributes.end())
                throw ValidationError("grammar: template references unrealized slot: " + slot);
            out += at->second;
        } else {
            out += tok;
        }
    }
    return out;
}

int AttributeGrammar::attribute_dim() const {
    int n = 0;
    for (const auto& slot : slots) n += static_cast<int>(vocab.at(slot).size());
    return n;
}

std::vector<std::string> AttributeGrammar::full_vocabulary() const {
    std::set<std::string> words;
    for (const auto& slot : slots)
        for (const auto& v : vocab.at(slot)) words.insert(v);
    for (const auto& [key, tpl] : templates) {
        (void)key;
        for (const auto& tok : split_ws(tpl))
            if (tok.front() != '{') words.insert(tok);
    }
    return {words.begin(), words.end()};
}

namespace {

std::map<std::string, std::string> perturb_attributes(const std::map<std::string, std::string>& attrs,
                                                       const AttributeGrammar& grammar, Rng& rng,
                                                       std::string* slot_out, std::string* old_out,
                                                       std::string* new_out) {
    std::vector<std::string> realized;
    for (const auto& slot : grammar.slots)
        if (attrs.count(slot)) realized.push_back(slot);
    if (realized.empty()) throw ValidationError("perturb: expression realizes no grammar slot");
    const std::string slot = realized[rng.uniform_index(realized.size())];
    const auto& values = grammar.vocab.at(slot);
    const std::string old_value = attrs.at(slot);
    std::vector<std::string> others;
    for (const auto& v : values)
        if (v != old_value) others.push_back(v);
    if (others.empty()) throw ValidationError("perturb: no alternative value for slot " + slot);
    const std::string new_value = others[rng.uniform_index(others.size())];
    auto out = attrs;
    out[slot] = new_value;
    if (slot_out) *slot_out = slot;
    if (old_out) *old_out = old_value;
    if (new_out) *new_out = new_value;
    return out;
}

}  // namespace

CounterfactualQuery perturb_expression(const std::string& text,
                                       const std::map<std::string, std::string>& attributes,
                                       const std::string& expression_id,
                                       const AttributeGrammar& grammar, Rng& rng) {
    CounterfactualQuery q;
    q.source_expression_id = expression_id;
    perturb_attributes(attributes, grammar, rng, &q.perturbed_slot, &q.original_value, &q.new_value);
    // single-word slot values: swap the one token in place
    auto tokens = split_ws(text);
    bool replaced = false;
    for (auto& tok : tokens) {
        if (!replaced && tok == q.original_value) {
            tok = q.new_value;
            replaced = true;
        }
    }
    if (!replaced)
        throw ValidationError("perturb: source text does not realize value '" + q.original_value + "'");
    q.text = join_tokens(tokens);
    return q;
}

std::vector<Proposal> make_proposals(const std::vector<GtObject>& objects,
                                     const AttributeGrammar& grammar, const SceneGenParams& params,
                                     Rng& rng) {
    std::vector<Proposal> out;
    for (const auto& obj : objects) {
        if (rng.bernoulli(params.miss_rate)) continue;
        Proposal p;
        Box b = obj.box;
        if (params.box_jitter > 0.0) {
            b.cx += rng.uniform(-1.0, 1.0) * params.box_jitter;
            b.cy += rng.uniform(-1.0, 1.0) * params.box_jitter;
            b.w *= 1.0 + rng.uniform(-1.0, 1.0) * params.box_jitter;
            b.h *= 1.0 + rng.uniform(-1.0, 1.0) * params.box_jitter;
            b = clamp_box(b);
        }
        p.box = b;
        auto attrs = obj.attributes;
        if (rng.bernoulli(params.caption_error_rate))
            attrs = perturb_attributes(attrs, grammar, rng, nullptr, nullptr, nullptr);
        p.caption = grammar.render(attrs);
        p.detector_score = rng.uniform(0.75, 0.99);
        out.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (!rng.bernoulli(params.spurious_rate)) continue;
        Proposal p;
        Box b;
        b.w = rng.uniform(0.05, 0.15);
        b.h = rng.uniform(0.08, 0.2);
        b.cx = rng.uniform(b.w / 2.0, 1.0 - b.w / 2.0);
        b.cy = rng.uniform(b.h / 2.0, 1.0 - b.h / 2.0);
        p.box = b;
        std::map<std::string, std::string> attrs;
        for (const auto& slot : grammar.slots) {
            const auto& values = grammar.vocab.at(slot);
            attrs[slot] = values[rng.uniform_index(values.size())];
        }
        p.caption = grammar.render(attrs);
        p.detector_score = rng.uniform(0.3, 0.9);
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

// Objects sit on a coarse placement grid so boxes never fully coincide; the
// location attribute is derived from the horizontal band the object lands in.
constexpr int kGridCols = 5;
constexpr int kGridRows = 3;

std::string location_of(double cx) {
    if (cx < 1.0 / 3.0) return "left";
    if (cx < 2.0 / 3.0) return "center";
    return "right";
}

std::vector<GtObject> place_objects(const AttributeGrammar& grammar, int n_objects, Rng& rng) {
    const int capacity = kGridCols * kGridRows;
    if (n_objects > capacity)
        throw ValidationError("generate_scene: n_objects " + std::to_string(n_objects) +
                              " exceeds grid capacity " + std::to_string(capacity));
    std::vector<int> cells(static_cast<std::size_t>(capacity));
    for (int i = 0; i < capacity; ++i) cells[static_cast<std::size_t>(i)] = i;
    rng.shuffle(cells);
    std::vector<GtObject> objects;
    for (int i = 0; i < n_objects; ++i) {
        const int cell = cells[static_cast<std::size_t>(i)];
        const int col = cell % kGridCols;
        const int row = cell / kGridCols;
        GtObject o;
        o.object_id = i + 1;
        Box b;
        b.w = rng.uniform(0.08, 0.14);
        b.h = rng.uniform(0.1, 0.2);
        b.cx = (col + 0.5) / kGridCols + rng.uniform(-0.03, 0.03);
        b.cy = (row + 0.5) / kGridRows + rng.uniform(-0.04, 0.04);
        o.box = clamp_box(b);
        for (const auto& slot : grammar.slots) {
            if (slot == "location") {
                o.attributes[slot] = location_of(o.box.cx);
            } else {
                const auto& values = grammar.vocab.at(slot);
                o.attributes[slot] = values[rng.uniform_index(values.size())];
            }
        }
        objects.push_back(std::move(o));
    }
    return objects;
}

}  // namespace

SceneRecord generate_scene(const AttributeGrammar& grammar, const SceneGenParams& params, Rng& rng) {
    if (params.caption_error_rate < 0 || params.caption_error_rate > 1 || params.miss_rate < 0 ||
        params.miss_rate > 1 || params.spurious_rate < 0 || params.spurious_rate > 1)
        throw ValidationError("generate_scene: rates must lie in [0,1]");
    SceneRecord rec;
    rec.sequence_id = "scene";
    rec.frame_id = 0;
    rec.gt_objects = place_objects(grammar, params.n_objects, rng);
    rec.proposals = make_proposals(rec.gt_objects, grammar, params, rng);
    return rec;
}

SequenceData generate_sequence(const AttributeGrammar& grammar, const std::string& sequence_id,
                               const SequenceParams& params, Rng& rng) {
    SequenceData seq;
    seq.sequence_id = sequence_id;
    auto objects = place_objects(grammar, params.scene.n_objects, rng);

    // per-object velocity from the motion attribute; location bands hold
    // because drift over a short sequence is small
    std::vector<std::pair<double, double>> velocity;
    for (const auto& o : objects) {
        const std::string& motion = o.attributes.count("motion") ? o.attributes.at("motion") : "parked";
        double vx = 0.0, vy = 0.0;
        if (motion == "moving") {
            vx = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.002, 0.004);
        } else if (motion == "turning") {
            vx = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.001, 0.003);
            vy = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.001, 0.003);
        }
        velocity.emplace_back(vx, vy);
    }

    // expressions: each describes at least one object; category always realized
    std::set<std::string> used_texts;
    for (int e = 0; e < params.n_expressions; ++e) {
        Expression expr;
        expr.id = "e" + std::to_string(e);
        for (int attempt = 0; attempt < 64; ++attempt) {
            const auto& obj = objects[rng.uniform_index(objects.size())];
            std::map<std::string, std::string> attrs;
            attrs["category"] = obj.attributes.at("category");
            for (const auto& slot : grammar.slots) {
                if (slot == "category") continue;
                if (rng.bernoulli(0.5)) attrs[slot] = obj.attributes.at(slot);
            }
            const std::string text = grammar.render(attrs);
            if (used_texts.count(text) && attempt + 1 < 64) continue;
            expr.attributes = attrs;
            expr.text = text;
            used_texts.insert(text);
            break;
        }
        seq.expressions.push_back(std::move(expr));
    }

    for (int f = 0; f < params.n_frames; ++f) {
        SceneRecord rec;
        rec.sequence_id = sequence_id;
        rec.frame_id = f;
        rec.gt_objects = objects;
        rec.proposals = make_proposals(objects, grammar, params.scene, rng);
        for (auto& expr : seq.expressions) {
            std::set<int> pos;
            for (const auto& obj : objects) {
                bool match = true;
                for (const auto& [slot, value] : expr.attributes)
                    if (obj.attributes.at(slot) != value) {
                        match = false;
                        break;
                    }
                if (match) pos.insert(obj.object_id);
            }
            expr.positives[f] = pos;
            rec.positives[expr.id] = pos;
        }
        seq.frames.push_back(std::move(rec));
        for (std::size_t i = 0; i < objects.size(); ++i) {
            objects[i].box.cx += velocity[i].first;
            objects[i].box.cy += velocity[i].second;
            objects[i].box = clamp_box(objects[i].box);
        }
    }

    for (const auto& expr : seq.expressions)
        seq.counterfactuals[expr.id] = {
            perturb_expression(expr.text, expr.attributes, expr.id, grammar, rng)};
    return seq;
}

std::vector<Proposal> ingest_proposals(const std::vector<RawProposal>& raw, double image_width,
                                       double image_height) {
    if (image_width <= 0 || image_height <= 0)
        throw ValidationError("ingest_proposals: non-positive image dimensions");
    std::vector<Proposal> out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& r = raw[i];
        const double w = (r.x2 - r.x1) / image_width;
        const double h = (r.y2 - r.y1) / image_height;
        if (w < 0 || h < 0)
            throw ValidationError("ingest_proposals: negative width/height at index " +
                                  std::to_string(i));
        Proposal p;
        p.box.cx = (r.x1 + r.x2) / 2.0 / image_width;
        p.box.cy = (r.y1 + r.y2) / 2.0 / image_height;
        p.box.w = w;
        p.box.h = h;
        if (p.box.x1() < -1e-9 || p.box.x2() > 1.0 + 1e-9 || p.box.y1() < -1e-9 ||
            p.box.y2() > 1.0 + 1e-9)
            throw ValidationError("ingest_proposals: box outside [0,1] after normalization at index " +
                                  std::to_string(i));
        if (r.caption.empty())
            throw ValidationError("ingest_proposals: empty caption at index " + std::to_string(i));
        p.caption = r.caption;
        p.detector_score = r.detector_score;
        out.push_back(std::move(p));
    }
    return out;
}

Dataset generate_dataset(const DatasetGenParams& params, const AttributeGrammar& grammar) {
    grammar.validate();
    Dataset ds;
    ds.grammar = grammar;
    for (int s = 0; s < params.n_sequences; ++s) {
        const std::string id = "seq" + std::string(4 - std::to_string(s).size(), '0') + std::to_string(s);
        Rng rng = Rng::derive(params.seed, "sequence", static_cast<std::uint64_t>(s));
        ds.sequences.push_back(generate_sequence(grammar, id, params.sequence, rng));
    }
    return ds;
}

const SequenceData* Dataset::find_sequence(const std::string& id) const {
    for (const auto& s : sequences)
        if (s.sequence_id == id) return &s;
    return nullptr;
}

// ---- serialization -----------------------------------------------------

namespace {

json box_to_json(const Box& b) { return json::array({b.cx, b.cy, b.w, b.h}); }

Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ValidationError("box: expected [cx,cy,w,h]");
    return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json cf_to_json(const CounterfactualQuery& q) {
    return json{{"text", q.text},
                {"source_expression_id", q.source_expression_id},
                {"perturbed_slot", q.perturbed_slot},
                {"original_value", q.original_value},
                {"new_value", q.new_value}};
}

CounterfactualQuery cf_from_json(const json& j) {
    CounterfactualQuery q;
    q.text = j.at("text").get<std::string>();
    q.source_expression_id = j.at("source_expression_id").get<std::string>();
    q.perturbed_slot = j.at("perturbed_slot").get<std::string>();
    q.original_value = j.at("original_value").get<std::string>();
    q.new_value = j.at("new_value").get<std::string>();
    return q;
}

void check_cf(const CounterfactualQuery& q, const std::string& file, const std::string& where) {
    if (q.new_value == q.original_value)
        throw ValidationError(file + ": " + where + ": counterfactual new_value equals original_value");
    if (q.text.empty()) throw ValidationError(file + ": " + where + ": empty counterfactual text");
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << content;
    if (!f) throw IoError("write failed: " + path);
}

json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ValidationError(path + ": parse error: " + e.what());
    }
    return j;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory: " + dir);

    json jg;
    jg["slots"] = dataset.grammar.slots;
    jg["vocab"] = dataset.grammar.vocab;
    jg["templates"] = dataset.grammar.templates;
    write_text(dir + "/grammar.json", jg.dump(2) + "\n");

    for (const auto& seq : dataset.sequences) {
        const std::string sdir = dir + "/" + seq.sequence_id;
        fs::create_directories(sdir, ec);
        if (ec) throw IoError("cannot create sequence directory: " + sdir);

        std::string frames;
        for (const auto& rec : seq.frames) {
            json j;
            j["sequence_id"] = rec.sequence_id;
            j["frame_id"] = rec.frame_id;
            json gts = json::array();
            for (const auto& o : rec.gt_objects)
                gts.push_back(json{{"object_id", o.object_id},
                                   {"box", box_to_json(o.box)},
                                   {"attributes", o.attributes}});
            j["gt_objects"] = gts;
            json props = json::array();
            for (const auto& p : rec.proposals)
                props.push_back(json{{"box", box_to_json(p.box)},
                                     {"caption", p.caption},
                                     {"detector_score", p.detector_score}});
            j["proposals"] = props;
            frames += j.dump() + "\n";
        }
        write_text(sdir + "/frames.jsonl", frames);

        json jex = json::object();
        for (const auto& e : seq.expressions) {
            json pos = json::object();
            for (const auto& [frame, ids] : e.positives)
                pos[std::to_string(frame)] = std::vector<int>(ids.begin(), ids.end());
            jex[e.id] = json{{"text", e.text}, {"attributes", e.attributes}, {"positives", pos}};
        }
        write_text(sdir + "/expressions.json", jex.dump(2) + "\n");

        json jcf = json::object();
        for (const auto& [id, list] : seq.counterfactuals) {
            json arr = json::array();
            for (const auto& q : list) arr.push_back(cf_to_json(q));
            jcf[id] = arr;
        }
        write_text(sdir + "/counterfactuals.json", jcf.dump(2) + "\n");
    }
}

std::map<std::string, std::vector<CounterfactualQuery>> load_counterfactuals(const std::string& path) {
    const json j = load_json(path);
    if (!j.is_object()) throw ValidationError(path + ": expected an object keyed by expression id");
    std::map<std::string, std::vector<CounterfactualQuery>> out;
    for (const auto& [id, arr] : j.items()) {
        if (!arr.is_array()) throw ValidationError(path + ": entry " + id + " is not a list");
        std::vector<CounterfactualQuery> list;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            CounterfactualQuery q;
            try {
                q = cf_from_json(arr[i]);
            } catch (const json::exception& e) {
                throw ValidationError(path + ": " + id + "[" + std::to_string(i) + "]: " + e.what());
            }
            check_cf(q, path, id + "[" + std::to_string(i) + "]");
            list.push_back(std::move(q));
        }
        out[id] = std::move(list);
    }
    return out;
}

namespace {

SequenceData load_sequence_dir(const std::string& sdir, const std::string& sequence_id,
                               const AttributeGrammar& grammar) {
    (void)grammar;
    SequenceData seq;
    seq.sequence_id = sequence_id;

    const std::string frames_path = sdir + "/frames.jsonl";
    std::ifstream f(frames_path);
    if (!f) throw IoError("cannot open: " + frames_path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(frames_path + ":" + std::to_string(line_no) + ": parse error: " +
                                  e.what());
        }
        SceneRecord rec;
        try {
            rec.sequence_id = j.at("sequence_id").get<std::string>();
            rec.frame_id = j.at("frame_id").get<int>();
            for (const auto& o : j.at("gt_objects")) {
                GtObject g;
                g.object_id = o.at("object_id").get<int>();
                g.box = box_from_json(o.at("box"));
                g.attributes = o.at("attributes").get<std::map<std::string, std::string>>();
                rec.gt_objects.push_back(std::move(g));
            }
            for (const auto& p : j.at("proposals")) {
                Proposal pr;
                pr.box = box_from_json(p.at("box"));
                pr.caption = p.at("caption").get<std::string>();
                pr.detector_score = p.at("detector_score").get<double>();
                if (pr.caption.empty())
                    throw ValidationError("empty proposal caption");
                rec.proposals.push_back(std::move(pr));
            }
        } catch (const json::exception& e) {
            throw ValidationError(frames_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        seq.frames.push_back(std::move(rec));
    }

    const std::string expr_path = sdir + "/expressions.json";
    const json jex = load_json(expr_path);
    for (const auto& [id, je] : jex.items()) {
        Expression e;
        e.id = id;
        try {
            e.text = je.at("text").get<std::string>();
            e.attributes = je.at("attributes").get<std::map<std::string, std::string>>();
            for (const auto& [frame, ids] : je.at("positives").items()) {
                std::set<int> s;
                for (const auto& v : ids) s.insert(v.get<int>());
                e.positives[std::stoi(frame)] = std::move(s);
            }
        } catch (const json::exception& ex) {
            throw ValidationError(expr_path + ": " + id + ": " + ex.what());
        }
        seq.expressions.push_back(std::move(e));
    }
    std::sort(seq.expressions.begin(), seq.expressions.end(),
              [](const Expression& a, const Expression& b) { return a.id < b.id; });

    const std::string cf_path = sdir + "/counterfactuals.json";
    if (fs::exists(cf_path)) seq.counterfactuals = load_counterfactuals(cf_path);

    // project expression positives into the frame records
    for (auto& rec : seq.frames)
        for (const auto& e : seq.expressions) {
            auto it = e.positives.find(rec.frame_id);
            rec.positives[e.id] = it != e.positives.end() ? it->second : std::set<int>{};
        }
    return seq;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
    Dataset ds;
    const std::string gpath = dir + "/grammar.json";
    if (fs::exists(gpath)) {
        const json jg = load_json(gpath);
        try {
            ds.grammar.slots = jg.at("slots").get<std::vector<std::string>>();
            ds.grammar.vocab = jg.at("vocab").get<std::map<std::string, std::vector<std::string>>>();
            ds.grammar.templates = jg.at("templates").get<std::map<std::string, std::string>>();
        } catch (const json::exception& e) {
            throw ValidationError(gpath + ": " + e.what());
        }
    } else {
        ds.grammar = AttributeGrammar::default_grammar();
    }
    ds.grammar.validate();

    std::vector<std::string> seq_ids;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory()) seq_ids.push_back(entry.path().filename().string());
    std::sort(seq_ids.begin(), seq_ids.end());
    for (const auto& id : seq_ids)
        ds.sequences.push_back(load_sequence_dir(dir + "/" + id, id, ds.grammar));
    return ds;
}

ValidationReport validate_dataset(const std::string& dir) {
    ValidationReport report;
    auto err = [&report](const std::string& file, const std::string& record, const std::string& msg) {
        report.errors.push_back({file, record, msg});
    };

    Dataset ds;
    try {
        ds = load_dataset(dir);
    } catch (const std::exception& e) {
        err(dir, "", e.what());
        return report;
    }

    for (const auto& seq : ds.sequences) {
        const std::string sdir = dir + "/" + seq.sequence_id;
        for (const auto& rec : seq.frames) {
            const std::string where = "frame " + std::to_string(rec.frame_id);
            std::set<int> ids;
            for (const auto& o : rec.gt_objects) {
                if (!ids.insert(o.object_id).second)
                    err(sdir + "/frames.jsonl", where, "duplicate object_id " + std::to_string(o.object_id));
                if (o.box.w < 0 || o.box.h < 0)
                    err(sdir + "/frames.jsonl", where, "negative box size for object " + std::to_string(o.object_id));
                for (const auto& slot : ds.grammar.slots) {
                    auto it = o.attributes.find(slot);
                    if (it == o.attributes.end()) {
                        err(sdir + "/frames.jsonl", where,
                            "object " + std::to_string(o.object_id) + " missing slot " + slot);
                    } else {
                        const auto& values = ds.grammar.vocab.at(slot);
                        if (std::find(values.begin(), values.end(), it->second) == values.end())
                            err(sdir + "/frames.jsonl", where,
                                "object " + std::to_string(o.object_id) + " has unknown " + slot +
                                    " value '" + it->second + "'");
                    }
                }
            }
            for (std::size_t i = 0; i < rec.proposals.size(); ++i) {
                const auto& p = rec.proposals[i];
                if (p.caption.empty())
                    err(sdir + "/frames.jsonl", where, "proposal " + std::to_string(i) + " has empty caption");
                if (p.box.w < 0 || p.box.h < 0)
                    err(sdir + "/frames.jsonl", where, "proposal " + std::to_string(i) + " has negative size");
                if (p.box.x1() < -1e-9 || p.box.x2() > 1 + 1e-9 || p.box.y1() < -1e-9 || p.box.y2() > 1 + 1e-9)
                    err(sdir + "/frames.jsonl", where,
                        "proposal " + std::to_string(i) + " outside normalized bounds");
                if (p.detector_score < 0 || p.detector_score > 1)
                    err(sdir + "/frames.jsonl", where,
                        "proposal " + std::to_string(i) + " detector_score outside [0,1]");
            }
        }
        std::map<int, std::set<int>> frame_objects;
        for (const auto& rec : seq.frames)
            for (const auto& o : rec.gt_objects) frame_objects[rec.frame_id].insert(o.object_id);
        for (const auto& e : seq.expressions) {
            if (e.text.empty()) err(sdir + "/expressions.json", e.id, "empty text");
            for (const auto& [frame, ids] : e.positives) {
                auto fit = frame_objects.find(frame);
                if (fit == frame_objects.end()) {
                    if (!ids.empty())
                        err(sdir + "/expressions.json", e.id,
                            "positives reference missing frame " + std::to_string(frame));
                    continue;
                }
                for (int id : ids)
                    if (!fit->second.count(id))
                        err(sdir + "/expressions.json", e.id,
                            "positives reference unknown object_id " + std::to_string(id) + " in frame " +
                                std::to_string(frame));
            }
        }
        std::set<std::string> expr_ids;
        for (const auto& e : seq.expressions) expr_ids.insert(e.id);
        for (const auto& [id, list] : seq.counterfactuals) {
            if (!expr_ids.count(id))
                err(sdir + "/counterfactuals.json", id, "unknown source expression id");
            for (std::size_t i = 0; i < list.size(); ++i) {
                const auto& q = list[i];
                const std::string where = id + "[" + std::to_string(i) + "]";
                if (q.new_value == q.original_value)
                    err(sdir + "/counterfactuals.json", where, "new_value equals original_value");
                if (q.source_expression_id != id)
                    err(sdir + "/counterfactuals.json", where, "source_expression_id mismatch");
                // single-edit check against the source text
                for (const auto& e : seq.expressions) {
                    if (e.id != id) continue;
                    auto src = split_ws(e.text);
                    auto cft = split_ws(q.text);
                    if (src.size() != cft.size()) {
                        err(sdir + "/counterfactuals.json", where, "token count differs from source");
                        break;
                    }
                    int diffs = 0;
                    bool correct_edit = true;
                    for (std::size_t t = 0; t < src.size(); ++t)
                        if (src[t] != cft[t]) {
                            ++diffs;
                            if (src[t] != q.original_value || cft[t] != q.new_value) correct_edit = false;
                        }
                    if (diffs != 1 || !correct_edit)
                        err(sdir + "/counterfactuals.json", where,
                            "text must differ from source in exactly the perturbed slot");
                    break;
                }
            }
        }
    }
    return report;
}

}  // namespace coal
