// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "coal/common.hpp"
#include "coal/matching.hpp"

namespace coal {

// Attribute slots, per-slot vocabularies, and sentence templates keyed by the
// sorted set of slots they realize ("category+color" -> "the {color} {category}").
// Slot values are single words, distinct across slots and from template words,
// so a one-slot perturbation changes exactly one token.
struct AttributeGrammar {
    std::vector<std::string> slots;
    std::map<std::string, std::vector<std::string>> vocab;
    std::map<std::string, std::string> templates;

    static AttributeGrammar default_grammar();
    void validate() const;

    static std::string subset_key(const std::map<std::string, std::string>& attributes);
    std::string render(const std::map<std::string, std::string>& attributes) const;
    int attribute_dim() const;
    std::vector<std::string> full_vocabulary() const;
};

struct Proposal {
    Box box;
    std::string caption;
    double detector_score = 1.0;
};

struct GtObject {
    int object_id = 0;
    Box box;
    std::map<std::string, std::string> attributes;
};

struct SceneRecord {
    std::string sequence_id;
    int frame_id = 0;
    std::vector<Proposal> proposals;
    std::vector<GtObject> gt_objects;
    // expression_id -> matching object ids, populated from expressions.json
    std::map<std::string, std::set<int>> positives;
};

struct Expression {
    std::string id;
    std::string text;
    std::map<std::string, std::string> attributes;
    std::map<int, std::set<int>> positives;  // frame -> object ids
};

struct CounterfactualQuery {
    std::string text;
    std::string source_expression_id;
    std::string perturbed_slot;
    std::string original_value;
    std::string new_value;
};

struct SceneGenParams {
    int n_objects = 4;
    double caption_error_rate = 0.0;
    double box_jitter = 0.0;
    double spurious_rate = 0.0;
    double miss_rate = 0.0;
};

// One noisy frame: ground-truth objects plus VLM-style proposals (jittered /
// missed / spurious boxes, captions with occasional hallucinated slots).
SceneRecord generate_scene(const AttributeGrammar& grammar, const SceneGenParams& params, Rng& rng);

// Proposal noise model shared by generate_scene and the sequence generator.
std::vector<Proposal> make_proposals(const std::vector<GtObject>& objects,
                                     const AttributeGrammar& grammar, const SceneGenParams& params,
                                     Rng& rng);

struct SequenceParams {
    int n_frames = 20;
    int n_expressions = 10;
    SceneGenParams scene;
};

struct SequenceData {
    std::string sequence_id;
    std::vector<SceneRecord> frames;
    std::vector<Expression> expressions;
    std::map<std::string, std::vector<CounterfactualQuery>> counterfactuals;
};

SequenceData generate_sequence(const AttributeGrammar& grammar, const std::string& sequence_id,
                               const SequenceParams& params, Rng& rng);

// Replaces one realized slot with a different value from its vocabulary and
// re-renders; the text differs from the source in exactly that token.
CounterfactualQuery perturb_expression(const std::string& text,
                                       const std::map<std::string, std::string>& attributes,
                                       const std::string& expression_id,
                                       const AttributeGrammar& grammar, Rng& rng);

std::map<std::string, std::vector<CounterfactualQuery>> load_counterfactuals(const std::string& path);

// Pixel-space corner boxes -> normalized center boxes; rejects invalid
// records by index.
struct RawProposal {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    std::string caption;
    double detector_score = 1.0;
};
std::vector<Proposal> ingest_proposals(const std::vector<RawProposal>& raw, double image_width,
                                       double image_height);

struct Dataset {
    AttributeGrammar grammar;
    std::vector<SequenceData> sequences;

    const SequenceData* find_sequence(const std::string& id) const;
};

struct DatasetGenParams {
    int n_sequences = 1;
    SequenceParams sequence;
    std::uint64_t seed = 42;
};

Dataset generate_dataset(const DatasetGenParams& params, const AttributeGrammar& grammar);

// Directory layout: grammar.json at the root, one directory per sequence with
// frames.jsonl, expressions.json and counterfactuals.json. All coordinates
// normalized.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct ValidationIssue {
    std::string file;
    std::string record;  // record pointer (line / id / index), empty if file-level
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> errors;
    std::vector<ValidationIssue> warnings;
    bool ok() const { return errors.empty(); }
};

ValidationReport validate_dataset(const std::string& dir);

}  // namespace coal
