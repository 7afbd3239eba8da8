// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coal/tensor_ops.hpp"

namespace coal {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central finite differences at 64-bit against the tape gradients.
// rel = |fd - grad| / max(|fd|, |grad|, 0.01).
class GradChecker {
public:
    double step = 1e-4;
    double tol = 1e-4;

    // loss_fn must rebuild the loss from the leaves on every call; the leaves
    // are watched for the analytic pass and treated as constants for the
    // finite-difference evaluations.
    double check(const std::vector<Tensor<double>*>& leaves,
                 const std::function<Tensor<double>()>& loss_fn) const;
};

// Every registered differentiable op plus the composite HMSI blocks and the
// end-to-end tiny frame (N=2, L=3, d=8, 8x8 map).
std::vector<GradCheckResult> run_standard_gradchecks();

}  // namespace coal
