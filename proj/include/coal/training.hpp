// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coal/losses.hpp"
#include "coal/optim.hpp"

namespace coal {

struct TrainConfig {
    int epochs = 30;
    double lr = 1e-4;
    int n_queries = 10;
    std::uint64_t seed = 42;
    std::string precision = "f32";  // f32 | f64
    bool cf_enabled = true;
    bool esi_enabled = true;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double grad_clip = 0.0;  // 0 disables
    double label_iou_threshold = 0.5;
    ModelConfig model;
    EncoderConfig encoder;
};

struct EpochLog {
    int epoch = 0;
    double main = 0.0;
    double cf = 0.0;
    double total = 0.0;
    int frames = 0;
    int skipped = 0;
};

template <typename T>
struct TrainState {
    HmsiModel<T> model;
    AdamWState<T> opt;
    int epoch = 0;  // completed epochs
    TrainConfig config;
};

template <typename T>
TrainState<T> init_train_state(const TrainConfig& config);

// Runs epochs state.epoch..target_epochs-1. All randomness derives from
// (seed, epoch, frame), so resuming from a checkpoint reproduces an
// uninterrupted run bit for bit.
template <typename T>
std::vector<EpochLog> train(TrainState<T>& state, const Dataset& dataset, int target_epochs,
                            const std::function<void(const EpochLog&)>& on_epoch = nullptr);

// Checkpoint container: param.*, adam.m.*, adam.v.* plus meta.* scalars
// (dims, thresholds, epoch, optimizer step, dtype, init scheme, thread count).
template <typename T>
void save_checkpoint(const TrainState<T>& state, const std::string& path);
template <typename T>
TrainState<T> load_checkpoint(const std::string& path);

// dtype code of a saved checkpoint (0 = f32, 1 = f64)
std::uint32_t checkpoint_dtype(const std::string& path);

struct GroundingReport {
    int positive_total = 0;
    int positive_correct = 0;  // P > 0.5
    int negative_total = 0;
    int negative_correct = 0;  // P < 0.5
    double mean_positive_p = 0.0;
    double mean_negative_p = 0.0;
    int cf_pairs = 0;          // (frame, expression) pairs with a visible target
    int cf_true_above = 0;     // pairs where the true query outscores its counterfactual
    double mean_cf_p = 0.0;    // mean target probability under the counterfactual
};

// Scores every (frame, expression) pair of the dataset against the stored
// counterfactuals; the basis for the overfit / push-pull checks.
template <typename T>
GroundingReport evaluate_grounding(const HmsiModel<T>& model, const FeatureProvider<T>& provider,
                                   const Dataset& dataset, double label_iou_threshold = 0.5);

}  // namespace coal
