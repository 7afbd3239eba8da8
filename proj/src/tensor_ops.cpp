// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

namespace coal {

namespace {

template <typename T>
struct Rec {
    std::shared_ptr<TapeCore<T>> core;
    std::vector<int> ids;
    bool active() const { return core != nullptr; }
};

template <typename T>
Rec<T> recorder(std::initializer_list<const Tensor<T>*> inputs) {
    Rec<T> r;
    r.ids.reserve(inputs.size());
    for (const Tensor<T>* t : inputs) {
        if (t->tracked()) {
            auto c = t->tape();
            if (r.core && r.core != c) throw std::invalid_argument("tensor op: inputs on different tapes");
            r.core = c;
            r.ids.push_back(t->node_id());
        } else {
            r.ids.push_back(-1);
        }
    }
    return r;
}

template <typename T, typename Vjp>
void record(Tensor<T>& out, Rec<T>& rec, Vjp&& vjp) {
    if (!rec.active()) return;
    TapeNode<T> node;
    node.inputs = rec.ids;
    node.out_size = out.numel();
    node.vjp = std::forward<Vjp>(vjp);
    int id = rec.core->add_node(std::move(node));
    out.attach_(rec.core, id);
}

template <typename T>
T* grad_ptr(TapeCore<T>& tc, int id) {
    return id >= 0 ? tc.grad_buffer(id).data() : nullptr;
}

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// ---- raw kernels ------------------------------------------------------

// c[m,n] (+)= a[m,k] . b[k,n]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] (+)= a[m,k] . b[n,k]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<std::size_t>(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// c[k,n] += a[m,k]^T . b[m,n]
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        const T* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* crow = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add: shape mismatch");
    auto rec = recorder<T>({&a, &b});
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    const auto& xb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids](TapeCore<T>& tc, const std::vector<T>& g) {
            for (int slot = 0; slot < 2; ++slot) {
                T* gp = grad_ptr(tc, ids[static_cast<std::size_t>(slot)]);
                if (!gp) continue;
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "sub: shape mismatch");
    auto rec = recorder<T>({&a, &b});
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    const auto& xb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] - xb[i];
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (T* gb = grad_ptr(tc, ids[1]))
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch");
    auto rec = recorder<T>({&a, &b});
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    const auto& xb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sa = a.storage();
        auto sb = b.storage();
        record(out, rec, [ids, sa, sb](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*sb)[i];
            if (T* gb = grad_ptr(tc, ids[1]))
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*sa)[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    auto rec = recorder<T>({&a});
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * c;
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, c](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    auto rec = recorder<T>({&a});
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + c;
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    auto rec = recorder<T>({&a});
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(xa[i] > T(0))) throw NumericError("log: non-positive input at index " + std::to_string(i));
        y[i] = std::log(xa[i]);
    }
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sa = a.storage();
        record(out, rec, [ids, sa](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*sa)[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    require(lo <= hi, "clamp: lo > hi");
    auto rec = recorder<T>({&a});
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(std::max(xa[i], lo), hi);
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sa = a.storage();
        record(out, rec, [ids, sa, lo, hi](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i)
                    if ((*sa)[i] >= lo && (*sa)[i] <= hi) ga[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
    require(a.rank() == 2, "add_bias: matrix expected");
    require(bias.rank() == 1 && bias.dim(0) == a.dim(1), "add_bias: bias length mismatch");
    auto rec = recorder<T>({&a, &bias});
    const int m = a.dim(0), n = a.dim(1);
    std::vector<T> y(a.numel());
    const auto& xa = a.data();
    const auto& xb = bias.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            y[static_cast<std::size_t>(i) * n + j] = xa[static_cast<std::size_t>(i) * n + j] + xb[static_cast<std::size_t>(j)];
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, m, n](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (T* gb = grad_ptr(tc, ids[1]))
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: 2D tensors expected");
    require(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree");
    auto rec = recorder<T>({&a, &b});
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> y(static_cast<std::size_t>(m) * n);
    mm_nn(a.data().data(), b.data().data(), y.data(), m, k, n, false);
    Tensor<T> out({m, n}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sa = a.storage();
        auto sb = b.storage();
        record(out, rec, [ids, sa, sb, m, k, n](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0])) mm_nt(g.data(), sb->data(), ga, m, n, k, true);
            if (T* gb = grad_ptr(tc, ids[1])) mm_tn_acc(sa->data(), g.data(), gb, m, k, n);
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul_nt: 2D tensors expected");
    require(a.dim(1) == b.dim(1), "matmul_nt: inner dimensions disagree");
    auto rec = recorder<T>({&a, &b});
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<T> y(static_cast<std::size_t>(m) * n);
    mm_nt(a.data().data(), b.data().data(), y.data(), m, k, n, false);
    Tensor<T> out({m, n}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sa = a.storage();
        auto sb = b.storage();
        record(out, rec, [ids, sa, sb, m, k, n](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0])) mm_nn(g.data(), sb->data(), ga, m, n, k, true);
            if (T* gb = grad_ptr(tc, ids[1])) mm_tn_acc(g.data(), sa->data(), gb, m, n, k);
        });
    }
    return out;
}

namespace {

struct AxisView {
    int lines;        // number of independent softmax lines
    int len;          // elements per line
    std::size_t line_stride;
    std::size_t elem_stride;
};

template <typename T>
AxisView axis_view(const Tensor<T>& a, int axis) {
    if (a.rank() == 1) {
        require(axis == 0, "softmax: axis out of range");
        return {1, a.dim(0), 0, 1};
    }
    require(a.rank() == 2, "softmax: rank-1 or rank-2 tensor expected");
    require(axis == 0 || axis == 1, "softmax: axis out of range");
    if (axis == 1) return {a.dim(0), a.dim(1), static_cast<std::size_t>(a.dim(1)), 1};
    return {a.dim(1), a.dim(0), 1, static_cast<std::size_t>(a.dim(1))};
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    auto view = axis_view(a, axis);
    auto rec = recorder<T>({&a});
    std::vector<T> y(a.numel());
    const auto& x = a.data();
    for (int l = 0; l < view.lines; ++l) {
        const std::size_t base = static_cast<std::size_t>(l) * view.line_stride;
        T mx = x[base];
        for (int i = 1; i < view.len; ++i) mx = std::max(mx, x[base + i * view.elem_stride]);
        T denom = T(0);
        for (int i = 0; i < view.len; ++i) {
            const T e = std::exp(x[base + i * view.elem_stride] - mx);
            y[base + i * view.elem_stride] = e;
            denom += e;
        }
        for (int i = 0; i < view.len; ++i) y[base + i * view.elem_stride] /= denom;
    }
    Tensor<T> out(a.shape(), std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sy = out.storage();
        record(out, rec, [ids, sy, view](TapeCore<T>& tc, const std::vector<T>& g) {
            T* ga = grad_ptr(tc, ids[0]);
            if (!ga) return;
            for (int l = 0; l < view.lines; ++l) {
                const std::size_t base = static_cast<std::size_t>(l) * view.line_stride;
                T dot = T(0);
                for (int i = 0; i < view.len; ++i) {
                    const std::size_t p = base + i * view.elem_stride;
                    dot += g[p] * (*sy)[p];
                }
                for (int i = 0; i < view.len; ++i) {
                    const std::size_t p = base + i * view.elem_stride;
                    ga[p] += (*sy)[p] * (g[p] - dot);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int row0, int count) {
    require(a.rank() == 2, "slice_rows: matrix expected");
    require(row0 >= 0 && count >= 0 && row0 + count <= a.dim(0), "slice_rows: range out of bounds");
    auto rec = recorder<T>({&a});
    const int n = a.dim(1);
    std::vector<T> y(static_cast<std::size_t>(count) * n);
    std::copy_n(a.data().begin() + static_cast<std::size_t>(row0) * n, y.size(), y.begin());
    Tensor<T> out({count, n}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, row0, n](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(row0) * n + i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int col0, int count) {
    require(a.rank() == 2, "slice_cols: matrix expected");
    require(col0 >= 0 && count >= 0 && col0 + count <= a.dim(1), "slice_cols: range out of bounds");
    auto rec = recorder<T>({&a});
    const int m = a.dim(0), n = a.dim(1);
    std::vector<T> y(static_cast<std::size_t>(m) * count);
    const auto& x = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
            y[static_cast<std::size_t>(i) * count + j] = x[static_cast<std::size_t>(i) * n + col0 + j];
    Tensor<T> out({m, count}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, col0, m, n, count](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < count; ++j)
                        ga[static_cast<std::size_t>(i) * n + col0 + j] += g[static_cast<std::size_t>(i) * count + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_rows: no parts");
    const int n = parts[0].dim(1);
    int m = 0;
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(1) == n, "concat_rows: column count mismatch");
        m += p.dim(0);
        ptrs.push_back(&p);
    }
    Rec<T> rec;
    rec.ids.reserve(parts.size());
    for (const auto& p : parts) {
        if (p.tracked()) {
            auto c = p.tape();
            if (rec.core && rec.core != c) throw std::invalid_argument("concat_rows: inputs on different tapes");
            rec.core = c;
            rec.ids.push_back(p.node_id());
        } else {
            rec.ids.push_back(-1);
        }
    }
    std::vector<T> y;
    y.reserve(static_cast<std::size_t>(m) * n);
    std::vector<int> row_counts;
    for (const auto& p : parts) {
        y.insert(y.end(), p.data().begin(), p.data().end());
        row_counts.push_back(p.dim(0));
    }
    Tensor<T> out({m, n}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, row_counts, n](TapeCore<T>& tc, const std::vector<T>& g) {
            std::size_t offset = 0;
            for (std::size_t s = 0; s < ids.size(); ++s) {
                const std::size_t len = static_cast<std::size_t>(row_counts[s]) * n;
                if (T* gp = grad_ptr(tc, ids[s]))
                    for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
                offset += len;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const int m = parts[0].dim(0);
    int n = 0;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(0) == m, "concat_cols: row count mismatch");
        n += p.dim(1);
    }
    Rec<T> rec;
    for (const auto& p : parts) {
        if (p.tracked()) {
            auto c = p.tape();
            if (rec.core && rec.core != c) throw std::invalid_argument("concat_cols: inputs on different tapes");
            rec.core = c;
            rec.ids.push_back(p.node_id());
        } else {
            rec.ids.push_back(-1);
        }
    }
    std::vector<T> y(static_cast<std::size_t>(m) * n);
    std::vector<int> col_counts;
    int col0 = 0;
    for (const auto& p : parts) {
        const int pn = p.dim(1);
        const auto& x = p.data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pn; ++j)
                y[static_cast<std::size_t>(i) * n + col0 + j] = x[static_cast<std::size_t>(i) * pn + j];
        col_counts.push_back(pn);
        col0 += pn;
    }
    Tensor<T> out({m, n}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, col_counts, m, n](TapeCore<T>& tc, const std::vector<T>& g) {
            int c0 = 0;
            for (std::size_t s = 0; s < ids.size(); ++s) {
                const int pn = col_counts[s];
                if (T* gp = grad_ptr(tc, ids[s]))
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < pn; ++j)
                            gp[static_cast<std::size_t>(i) * pn + j] += g[static_cast<std::size_t>(i) * n + c0 + j];
                c0 += pn;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& rows) {
    require(a.rank() == 2, "gather_rows: matrix expected");
    for (int r : rows) require(r >= 0 && r < a.dim(0), "gather_rows: row index out of bounds");
    auto rec = recorder<T>({&a});
    const int n = a.dim(1);
    std::vector<T> y(rows.size() * static_cast<std::size_t>(n));
    const auto& x = a.data();
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.begin() + static_cast<std::size_t>(rows[i]) * n, n, y.begin() + i * n);
    Tensor<T> out({static_cast<int>(rows.size()), n}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, rows, n](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < rows.size(); ++i)
                    for (int j = 0; j < n; ++j)
                        ga[static_cast<std::size_t>(rows[i]) * n + j] += g[i * n + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& a) {
    require(a.rank() == 3, "avg_pool2: [H,W,d] tensor expected");
    const int h = a.dim(0), w = a.dim(1), d = a.dim(2);
    require(h > 0 && w > 0, "avg_pool2: empty map");
    auto rec = recorder<T>({&a});
    const int oh = (h + 1) / 2, ow = (w + 1) / 2;
    std::vector<T> y(static_cast<std::size_t>(oh) * ow * d, T(0));
    const auto& x = a.data();
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            const int r1 = std::min(2 * r + 1, h - 1), c1 = std::min(2 * c + 1, w - 1);
            const int cells = (r1 - 2 * r + 1) * (c1 - 2 * c + 1);
            T* yo = y.data() + (static_cast<std::size_t>(r) * ow + c) * d;
            for (int rr = 2 * r; rr <= r1; ++rr)
                for (int cc = 2 * c; cc <= c1; ++cc) {
                    const T* xi = x.data() + (static_cast<std::size_t>(rr) * w + cc) * d;
                    for (int k = 0; k < d; ++k) yo[k] += xi[k];
                }
            const T inv = T(1) / static_cast<T>(cells);
            for (int k = 0; k < d; ++k) yo[k] *= inv;
        }
    }
    Tensor<T> out({oh, ow, d}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        record(out, rec, [ids, h, w, d, oh, ow](TapeCore<T>& tc, const std::vector<T>& g) {
            T* ga = grad_ptr(tc, ids[0]);
            if (!ga) return;
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c) {
                    const int r1 = std::min(2 * r + 1, h - 1), c1 = std::min(2 * c + 1, w - 1);
                    const int cells = (r1 - 2 * r + 1) * (c1 - 2 * c + 1);
                    const T inv = T(1) / static_cast<T>(cells);
                    const T* go = g.data() + (static_cast<std::size_t>(r) * ow + c) * d;
                    for (int rr = 2 * r; rr <= r1; ++rr)
                        for (int cc = 2 * c; cc <= c1; ++cc) {
                            T* gi = ga + (static_cast<std::size_t>(rr) * w + cc) * d;
                            for (int k = 0; k < d; ++k) gi[k] += go[k] * inv;
                        }
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& map, const Tensor<T>& points) {
    require(map.rank() == 3, "grid_sample: [H,W,d] map expected");
    require(points.rank() == 2 && points.dim(1) == 2, "grid_sample: [P,2] points expected");
    const int h = map.dim(0), w = map.dim(1), d = map.dim(2);
    require(h > 0 && w > 0, "grid_sample: empty map");
    auto rec = recorder<T>({&map, &points});
    const int np = points.dim(0);
    std::vector<T> y(static_cast<std::size_t>(np) * d);
    const auto& m = map.data();
    const auto& pt = points.data();

    struct Cell {
        int x0, x1, y0, y1;
        T fx, fy;
        bool open_x, open_y;  // true when the coordinate was not border-clamped
    };
    std::vector<Cell> cells(static_cast<std::size_t>(np));
    for (int p = 0; p < np; ++p) {
        const T px = pt[static_cast<std::size_t>(p) * 2];
        const T py = pt[static_cast<std::size_t>(p) * 2 + 1];
        const T cx = std::min(std::max(px, T(0)), T(1)) * static_cast<T>(w - 1);
        const T cy = std::min(std::max(py, T(0)), T(1)) * static_cast<T>(h - 1);
        Cell cl;
        cl.x0 = static_cast<int>(std::floor(cx));
        cl.y0 = static_cast<int>(std::floor(cy));
        cl.x0 = std::min(std::max(cl.x0, 0), w - 1);
        cl.y0 = std::min(std::max(cl.y0, 0), h - 1);
        cl.x1 = std::min(cl.x0 + 1, w - 1);
        cl.y1 = std::min(cl.y0 + 1, h - 1);
        cl.fx = cx - static_cast<T>(cl.x0);
        cl.fy = cy - static_cast<T>(cl.y0);
        cl.open_x = px >= T(0) && px <= T(1);
        cl.open_y = py >= T(0) && py <= T(1);
        cells[static_cast<std::size_t>(p)] = cl;
        const T* m00 = m.data() + (static_cast<std::size_t>(cl.y0) * w + cl.x0) * d;
        const T* m01 = m.data() + (static_cast<std::size_t>(cl.y0) * w + cl.x1) * d;
        const T* m10 = m.data() + (static_cast<std::size_t>(cl.y1) * w + cl.x0) * d;
        const T* m11 = m.data() + (static_cast<std::size_t>(cl.y1) * w + cl.x1) * d;
        T* yo = y.data() + static_cast<std::size_t>(p) * d;
        const T w00 = (T(1) - cl.fy) * (T(1) - cl.fx), w01 = (T(1) - cl.fy) * cl.fx;
        const T w10 = cl.fy * (T(1) - cl.fx), w11 = cl.fy * cl.fx;
        for (int k = 0; k < d; ++k) yo[k] = w00 * m00[k] + w01 * m01[k] + w10 * m10[k] + w11 * m11[k];
    }
    Tensor<T> out({np, d}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sm = map.storage();
        record(out, rec, [ids, sm, cells, h, w, d, np](TapeCore<T>& tc, const std::vector<T>& g) {
            T* gm = grad_ptr<T>(tc, ids[0]);
            T* gp = grad_ptr<T>(tc, ids[1]);
            for (int p = 0; p < np; ++p) {
                const auto& cl = cells[static_cast<std::size_t>(p)];
                const T* go = g.data() + static_cast<std::size_t>(p) * d;
                const T w00 = (T(1) - cl.fy) * (T(1) - cl.fx), w01 = (T(1) - cl.fy) * cl.fx;
                const T w10 = cl.fy * (T(1) - cl.fx), w11 = cl.fy * cl.fx;
                const std::size_t i00 = (static_cast<std::size_t>(cl.y0) * w + cl.x0) * d;
                const std::size_t i01 = (static_cast<std::size_t>(cl.y0) * w + cl.x1) * d;
                const std::size_t i10 = (static_cast<std::size_t>(cl.y1) * w + cl.x0) * d;
                const std::size_t i11 = (static_cast<std::size_t>(cl.y1) * w + cl.x1) * d;
                if (gm)
                    for (int k = 0; k < d; ++k) {
                        gm[i00 + k] += w00 * go[k];
                        gm[i01 + k] += w01 * go[k];
                        gm[i10 + k] += w10 * go[k];
                        gm[i11 + k] += w11 * go[k];
                    }
                if (gp) {
                    const T* m00 = sm->data() + i00;
                    const T* m01 = sm->data() + i01;
                    const T* m10 = sm->data() + i10;
                    const T* m11 = sm->data() + i11;
                    T dfx = T(0), dfy = T(0);
                    for (int k = 0; k < d; ++k) {
                        dfx += go[k] * ((T(1) - cl.fy) * (m01[k] - m00[k]) + cl.fy * (m11[k] - m10[k]));
                        dfy += go[k] * ((T(1) - cl.fx) * (m10[k] - m00[k]) + cl.fx * (m11[k] - m01[k]));
                    }
                    if (cl.open_x) gp[static_cast<std::size_t>(p) * 2] += dfx * static_cast<T>(w - 1);
                    if (cl.open_y) gp[static_cast<std::size_t>(p) * 2 + 1] += dfy * static_cast<T>(h - 1);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& point) {
    require(point.numel() == 2, "bilinear_sample: point must have two coordinates");
    Tensor<T> pts = point.reshaped({1, 2});
    Tensor<T> sampled = grid_sample(map, pts);
    return sampled.reshaped({map.dim(2)});
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v) {
    require(u.numel() == v.numel() && u.numel() >= 1, "cosine_similarity: length mismatch");
    auto rec = recorder<T>({&u, &v});
    const auto& xu = u.data();
    const auto& xv = v.data();
    T dot = T(0), nu2 = T(0), nv2 = T(0);
    for (std::size_t i = 0; i < xu.size(); ++i) {
        dot += xu[i] * xv[i];
        nu2 += xu[i] * xu[i];
        nv2 += xv[i] * xv[i];
    }
    const T nu = std::sqrt(nu2), nv = std::sqrt(nv2);
    const T eps = T(1e-8);
    const T inv = T(1) / (nu * nv + eps);
    const T s = dot * inv;
    Tensor<T> out({1}, {s});
    if (rec.active()) {
        auto ids = rec.ids;
        auto su = u.storage();
        auto sv = v.storage();
        record(out, rec, [ids, su, sv, nu, nv, inv, s](TapeCore<T>& tc, const std::vector<T>& g) {
            const T go = g[0];
            const T tiny = T(1e-30);
            if (T* gu = grad_ptr(tc, ids[0])) {
                const T ratio = nu > tiny ? s * nv / nu : T(0);
                for (std::size_t i = 0; i < su->size(); ++i)
                    gu[i] += go * inv * ((*sv)[i] - ratio * (*su)[i]);
            }
            if (T* gv = grad_ptr(tc, ids[1])) {
                const T ratio = nv > tiny ? s * nu / nv : T(0);
                for (std::size_t i = 0; i < sv->size(); ++i)
                    gv[i] += go * inv * ((*su)[i] - ratio * (*sv)[i]);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    auto rec = recorder<T>({&a});
    T acc = T(0);
    for (T x : a.data()) acc += x;
    Tensor<T> out({1}, {acc});
    if (rec.active()) {
        auto ids = rec.ids;
        const std::size_t n = a.numel();
        record(out, rec, [ids, n](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    require(a.numel() > 0, "mean_all: empty tensor");
    auto rec = recorder<T>({&a});
    T acc = T(0);
    for (T x : a.data()) acc += x;
    const T inv = T(1) / static_cast<T>(a.numel());
    Tensor<T> out({1}, {acc * inv});
    if (rec.active()) {
        auto ids = rec.ids;
        const std::size_t n = a.numel();
        record(out, rec, [ids, n, inv](TapeCore<T>& tc, const std::vector<T>& g) {
            if (T* ga = grad_ptr(tc, ids[0]))
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[0] * inv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads) {
    require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention_core: matrices expected");
    const int d = q.dim(1);
    require(k.dim(1) == d && v.dim(1) == d, "attention_core: dimension mismatch");
    require(k.dim(0) == v.dim(0), "attention_core: key/value length mismatch");
    require(heads >= 1 && d % heads == 0, "attention_core: dimension not divisible by heads");
    auto rec = recorder<T>({&q, &k, &v});
    const int lq = q.dim(0), lk = k.dim(0), dh = d / heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    const auto& xq = q.data();
    const auto& xk = k.data();
    const auto& xv = v.data();
    std::vector<T> y(static_cast<std::size_t>(lq) * d, T(0));
    // soft attention rows saved for the backward pass, [heads][lq][lk]
    auto attn = std::make_shared<std::vector<T>>(static_cast<std::size_t>(heads) * lq * lk);
    std::vector<T> logits(static_cast<std::size_t>(lk));
    for (int hd = 0; hd < heads; ++hd) {
        const int c0 = hd * dh;
        for (int i = 0; i < lq; ++i) {
            const T* qi = xq.data() + static_cast<std::size_t>(i) * d + c0;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < lk; ++j) {
                const T* kj = xk.data() + static_cast<std::size_t>(j) * d + c0;
                T acc = T(0);
                for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
                logits[static_cast<std::size_t>(j)] = acc * sc;
                mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
            }
            T denom = T(0);
            T* srow = attn->data() + (static_cast<std::size_t>(hd) * lq + i) * lk;
            for (int j = 0; j < lk; ++j) {
                srow[j] = std::exp(logits[static_cast<std::size_t>(j)] - mx);
                denom += srow[j];
            }
            T* yo = y.data() + static_cast<std::size_t>(i) * d + c0;
            for (int j = 0; j < lk; ++j) {
                srow[j] /= denom;
                const T* vj = xv.data() + static_cast<std::size_t>(j) * d + c0;
                for (int c = 0; c < dh; ++c) yo[c] += srow[j] * vj[c];
            }
        }
    }
    Tensor<T> out({lq, d}, std::move(y));
    if (rec.active()) {
        auto ids = rec.ids;
        auto sq = q.storage();
        auto sk = k.storage();
        auto sv = v.storage();
        record(out, rec, [ids, sq, sk, sv, attn, lq, lk, d, dh, heads, sc](TapeCore<T>& tc, const std::vector<T>& g) {
            T* gq = grad_ptr(tc, ids[0]);
            T* gk = grad_ptr(tc, ids[1]);
            T* gv = grad_ptr(tc, ids[2]);
            std::vector<T> ds(static_cast<std::size_t>(lk));
            for (int hd = 0; hd < heads; ++hd) {
                const int c0 = hd * dh;
                for (int i = 0; i < lq; ++i) {
                    const T* go = g.data() + static_cast<std::size_t>(i) * d + c0;
                    const T* srow = attn->data() + (static_cast<std::size_t>(hd) * lq + i) * lk;
                    T dot = T(0);
                    for (int j = 0; j < lk; ++j) {
                        const T* vj = sv->data() + static_cast<std::size_t>(j) * d + c0;
                        T acc = T(0);
                        for (int c = 0; c < dh; ++c) acc += go[c] * vj[c];
                        ds[static_cast<std::size_t>(j)] = acc;
                        dot += acc * srow[j];
                        if (gv) {
                            T* gvj = gv + static_cast<std::size_t>(j) * d + c0;
                            for (int c = 0; c < dh; ++c) gvj[c] += srow[j] * go[c];
                        }
                    }
                    if (!gq && !gk) continue;
                    const T* qi = sq->data() + static_cast<std::size_t>(i) * d + c0;
                    for (int j = 0; j < lk; ++j) {
                        const T dz = srow[j] * (ds[static_cast<std::size_t>(j)] - dot) * sc;
                        if (dz == T(0)) continue;
                        const T* kj = sk->data() + static_cast<std::size_t>(j) * d + c0;
                        if (gq) {
                            T* gqi = gq + static_cast<std::size_t>(i) * d + c0;
                            for (int c = 0; c < dh; ++c) gqi[c] += dz * kj[c];
                        }
                        if (gk) {
                            T* gkj = gk + static_cast<std::size_t>(j) * d + c0;
                            for (int c = 0; c < dh; ++c) gkj[c] += dz * qi[c];
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, int heads) {
    require(q.rank() == 2 && k.rank() == 2 && q.dim(1) == k.dim(1), "attention_weights: shape mismatch");
    const int d = q.dim(1);
    require(heads >= 1 && d % heads == 0, "attention_weights: dimension not divisible by heads");
    const int lq = q.dim(0), lk = k.dim(0), dh = d / heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<T> y(static_cast<std::size_t>(heads) * lq * lk);
    for (int hd = 0; hd < heads; ++hd) {
        const int c0 = hd * dh;
        for (int i = 0; i < lq; ++i) {
            T* row = y.data() + (static_cast<std::size_t>(hd) * lq + i) * lk;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < lk; ++j) {
                T acc = T(0);
                for (int c = 0; c < dh; ++c)
                    acc += q.data()[static_cast<std::size_t>(i) * d + c0 + c] * k.data()[static_cast<std::size_t>(j) * d + c0 + c];
                row[j] = acc * sc;
                mx = std::max(mx, row[j]);
            }
            T denom = T(0);
            for (int j = 0; j < lk; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            for (int j = 0; j < lk; ++j) row[j] /= denom;
        }
    }
    return Tensor<T>({heads * lq, lk}, std::move(y));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
    return add_bias(matmul(x, p.weight), p.bias);
}

template <typename T>
Tensor<T> multi_head_cross_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const MhcaParams<T>& p, int heads) {
    Tensor<T> core = attention_core(linear(q, p.q_proj), linear(k, p.k_proj), linear(v, p.v_proj), heads);
    return linear(core, p.out_proj);
}

template <typename T>
void init_linear(LinearParams<T>& p, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<T> w(static_cast<std::size_t>(in) * out);
    for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
    p.weight = Tensor<T>({in, out}, std::move(w), true);
    p.bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
void init_mhca(MhcaParams<T>& p, int dim, Rng& rng) {
    init_linear(p.q_proj, dim, dim, rng);
    init_linear(p.k_proj, dim, dim, rng);
    init_linear(p.v_proj, dim, dim, rng);
    init_linear(p.out_proj, dim, dim, rng);
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& context) {
    for (T x : t.data())
        if (!std::isfinite(x)) throw NumericError(context + ": non-finite value");
}

#define COAL_INSTANTIATE(T)                                                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                    \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                               \
    template Tensor<T> log<T>(const Tensor<T>&);                                                         \
    template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                                 \
    template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> softmax<T>(const Tensor<T>&, int);                                                \
    template Tensor<T> slice_rows<T>(const Tensor<T>&, int, int);                                        \
    template Tensor<T> slice_cols<T>(const Tensor<T>&, int, int);                                        \
    template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                    \
    template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                    \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<int>&);                        \
    template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                                   \
    template Tensor<T> grid_sample<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> bilinear_sample<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> cosine_similarity<T>(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                                     \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                                    \
    template Tensor<T> attention_core<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);    \
    template Tensor<T> attention_weights<T>(const Tensor<T>&, const Tensor<T>&, int);                    \
    template Tensor<T> linear<T>(const Tensor<T>&, const LinearParams<T>&);                              \
    template Tensor<T> multi_head_cross_attention<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                                     const Tensor<T>&, const MhcaParams<T>&, int);       \
    template void init_linear<T>(LinearParams<T>&, int, int, Rng&);                                      \
    template void init_mhca<T>(MhcaParams<T>&, int, Rng&);                                               \
    template void check_finite<T>(const Tensor<T>&, const std::string&);

COAL_INSTANTIATE(float)
COAL_INSTANTIATE(double)

#undef COAL_INSTANTIATE

}  // namespace coal
