// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "coal/tensor.hpp"

namespace coal {

// Elementwise (shapes must match exactly; no implicit broadcasting)
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// a[m,n] + bias[n] broadcast over rows
template <typename T> Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias);

// Matrix products (2D only)
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a[m,k] x b[n,k]^T -> [m,n]
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// Softmax along `axis` of a rank-1 or rank-2 tensor, max-stabilized.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis);

// Row/column restructuring
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, int row0, int count);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, int col0, int count);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& rows);

// 2x2 mean pooling with ceil semantics; edge windows average the cells
// actually present. Input [H,W,d] -> [ceil(H/2), ceil(W/2), d].
template <typename T> Tensor<T> avg_pool2(const Tensor<T>& a);

// Bilinear interpolation on a [H,W,d] map at P continuous points in [0,1]^2
// (points tensor [P,2] as (x,y)); out-of-range points clamp to the border.
// Differentiable in both the map and the point coordinates.
template <typename T> Tensor<T> grid_sample(const Tensor<T>& map, const Tensor<T>& points);
template <typename T> Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& point);

// u.v / (|u||v| + 1e-8) -> scalar in [-1,1]; zero for two zero vectors.
template <typename T> Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v);

// Reductions to scalar
template <typename T> Tensor<T> sum_all(const Tensor<T>& a);
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);

// Scaled dot-product attention over `heads` column blocks of q/k/v [L,d];
// softmax over keys per head, heads re-concatenated. Projections are the
// caller's job (see multi_head_cross_attention).
template <typename T> Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k,
                                               const Tensor<T>& v, int heads);

// Attention weights for inspection/tests: [heads*Lq, Lk], rows sum to 1.
template <typename T> Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, int heads);

template <typename T>
struct LinearParams {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        f(prefix + ".bias", bias);
    }
};

template <typename T>
struct MhcaParams {
    LinearParams<T> q_proj, k_proj, v_proj, out_proj;

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        q_proj.visit(prefix + ".q_proj", f);
        k_proj.visit(prefix + ".k_proj", f);
        v_proj.visit(prefix + ".v_proj", f);
        out_proj.visit(prefix + ".out_proj", f);
    }
};

// y = x.W + b
template <typename T> Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);

// Projected multi-head cross-attention; residual is the caller's business.
template <typename T> Tensor<T> multi_head_cross_attention(const Tensor<T>& q, const Tensor<T>& k,
                                                           const Tensor<T>& v, const MhcaParams<T>& p,
                                                           int heads);

// weights ~ uniform(+-1/sqrt(fan_in)), bias 0; rng drawn in (weight, bias) order
template <typename T> void init_linear(LinearParams<T>& p, int in, int out, Rng& rng);
template <typename T> void init_mhca(MhcaParams<T>& p, int dim, Rng& rng);

// Throws NumericError when any element is NaN/Inf.
template <typename T> void check_finite(const Tensor<T>& t, const std::string& context);

}  // namespace coal
