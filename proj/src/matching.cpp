// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace coal {

double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double iy = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

namespace {

constexpr double kTieTol = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Successive shortest augmenting paths with Johnson potentials over the
// active rows/cols of `mat` (costs already oriented for minimization and
// shifted non-negative by the caller). Augments until `want_k` pairs or no
// path remains, which yields min-cost matchings of maximum cardinality.
struct Solver {
    const CostMatrix* mat;
    double shift;

    std::vector<int> match_row, match_col;
    std::vector<double> pot;  // rows then cols
    int k = 0;

    Solver(const CostMatrix& m, double s)
        : mat(&m), shift(s), match_row(static_cast<std::size_t>(m.rows), -1),
          match_col(static_cast<std::size_t>(m.cols), -1),
          pot(static_cast<std::size_t>(m.rows + m.cols), 0.0) {}

    double shifted(int r, int c) const { return mat->at(r, c) - shift; }

    bool augment(const std::vector<char>& row_active, const std::vector<char>& col_active) {
        const int m = mat->rows, n = mat->cols, total = m + n;
        std::vector<double> dist(static_cast<std::size_t>(total), kInf);
        std::vector<int> parent_col(static_cast<std::size_t>(n), -1);
        std::vector<char> done(static_cast<std::size_t>(total), 0);
        for (int r = 0; r < m; ++r)
            if (row_active[static_cast<std::size_t>(r)] && match_row[static_cast<std::size_t>(r)] < 0)
                dist[static_cast<std::size_t>(r)] = 0.0;
        int target = -1;
        while (true) {
            int u = -1;
            double best = kInf;
            for (int x = 0; x < total; ++x)
                if (!done[static_cast<std::size_t>(x)] && dist[static_cast<std::size_t>(x)] < best) {
                    best = dist[static_cast<std::size_t>(x)];
                    u = x;
                }
            if (u < 0) break;
            done[static_cast<std::size_t>(u)] = 1;
            if (u >= m) {
                const int c = u - m;
                const int r = match_col[static_cast<std::size_t>(c)];
                if (r < 0) {
                    target = c;
                    break;
                }
                // traverse the matched edge back to its row (reduced cost 0)
                const double w = std::max(0.0, pot[static_cast<std::size_t>(u)] - pot[static_cast<std::size_t>(r)] - shifted(r, c));
                if (dist[static_cast<std::size_t>(u)] + w < dist[static_cast<std::size_t>(r)])
                    dist[static_cast<std::size_t>(r)] = dist[static_cast<std::size_t>(u)] + w;
            } else {
                const int r = u;
                for (int c = 0; c < n; ++c) {
                    if (!col_active[static_cast<std::size_t>(c)] || !mat->is_feasible(r, c)) continue;
                    if (match_row[static_cast<std::size_t>(r)] == c) continue;
                    const double w = std::max(0.0, shifted(r, c) + pot[static_cast<std::size_t>(r)] - pot[static_cast<std::size_t>(m + c)]);
                    if (dist[static_cast<std::size_t>(u)] + w < dist[static_cast<std::size_t>(m + c)]) {
                        dist[static_cast<std::size_t>(m + c)] = dist[static_cast<std::size_t>(u)] + w;
                        parent_col[static_cast<std::size_t>(c)] = r;
                    }
                }
            }
        }
        if (target < 0) return false;
        const double dt = dist[static_cast<std::size_t>(m + target)];
        for (int x = 0; x < total; ++x) pot[static_cast<std::size_t>(x)] += std::min(dist[static_cast<std::size_t>(x)], dt);
        int c = target;
        while (true) {
            const int r = parent_col[static_cast<std::size_t>(c)];
            const int prev = match_row[static_cast<std::size_t>(r)];
            match_row[static_cast<std::size_t>(r)] = c;
            match_col[static_cast<std::size_t>(c)] = r;
            if (prev < 0) break;
            c = prev;
        }
        ++k;
        return true;
    }

    void run(const std::vector<char>& row_active, const std::vector<char>& col_active, int want_k) {
        while (want_k < 0 || k < want_k) {
            if (!augment(row_active, col_active)) break;
        }
    }

    double total_cost(const std::vector<char>& row_active) const {
        double t = 0.0;
        for (int r = 0; r < mat->rows; ++r)
            if (row_active[static_cast<std::size_t>(r)] && match_row[static_cast<std::size_t>(r)] >= 0)
                t += mat->at(r, match_row[static_cast<std::size_t>(r)]);
        return t;
    }

    // > 0 means the edge cannot belong to any optimal solution
    double reduced_cost(int r, int c) const {
        return shifted(r, c) + pot[static_cast<std::size_t>(r)] - pot[static_cast<std::size_t>(mat->rows + c)];
    }
};

double feasible_min(const CostMatrix& mat) {
    double mn = 0.0;
    bool any = false;
    for (int r = 0; r < mat.rows; ++r)
        for (int c = 0; c < mat.cols; ++c)
            if (mat.is_feasible(r, c)) {
                if (!any || mat.at(r, c) < mn) mn = mat.at(r, c);
                any = true;
            }
    return any ? mn : 0.0;
}

}  // namespace

AssignmentResult linear_assignment(const CostMatrix& input, bool maximize) {
    AssignmentResult out;
    if (input.rows == 0 || input.cols == 0) {
        for (int r = 0; r < input.rows; ++r) out.unmatched_rows.push_back(r);
        for (int c = 0; c < input.cols; ++c) out.unmatched_cols.push_back(c);
        return out;
    }
    CostMatrix mat = input;
    for (int r = 0; r < mat.rows; ++r)
        for (int c = 0; c < mat.cols; ++c) {
            if (!mat.is_feasible(r, c)) continue;
            if (!std::isfinite(mat.at(r, c)))
                throw std::invalid_argument("linear_assignment: non-finite cost entry");
            if (maximize) mat.at(r, c) = -mat.at(r, c);
        }
    const double shift = feasible_min(mat);

    std::vector<char> row_active(static_cast<std::size_t>(mat.rows), 1);
    std::vector<char> col_active(static_cast<std::size_t>(mat.cols), 1);

    Solver cur(mat, shift);
    cur.run(row_active, col_active, -1);
    int k_rem = cur.k;
    double c_rem = cur.total_cost(row_active);

    // Lexicographic refinement: walk rows in order and move each to the
    // smallest column that still admits an equal-cost completion. Edges with
    // positive reduced cost are outside every optimum and skipped outright.
    std::vector<std::pair<int, int>> pairs;
    for (int r = 0; r < mat.rows; ++r) {
        if (k_rem == 0) break;  // no pairs left to place
        const int c_cur = cur.match_row[static_cast<std::size_t>(r)];
        const int limit = c_cur >= 0 ? c_cur : mat.cols;
        int chosen = c_cur;
        row_active[static_cast<std::size_t>(r)] = 0;
        for (int c = 0; c < limit; ++c) {
            if (!col_active[static_cast<std::size_t>(c)] || !mat.is_feasible(r, c)) continue;
            if (cur.reduced_cost(r, c) > kTieTol) continue;
            col_active[static_cast<std::size_t>(c)] = 0;
            Solver sub(mat, shift);
            sub.run(row_active, col_active, k_rem - 1);
            const bool ok = sub.k == k_rem - 1 &&
                            mat.at(r, c) + sub.total_cost(row_active) <= c_rem + kTieTol;
            if (ok) {
                chosen = c;
                cur = std::move(sub);
                break;
            }
            col_active[static_cast<std::size_t>(c)] = 1;
        }
        if (chosen >= 0) {
            pairs.emplace_back(r, chosen);
            col_active[static_cast<std::size_t>(chosen)] = 0;
            c_rem -= mat.at(r, chosen);
            k_rem -= 1;
            if (chosen == c_cur) {
                // keep cur minus this pair; its restriction stays optimal
                cur.match_row[static_cast<std::size_t>(r)] = -1;
                cur.match_col[static_cast<std::size_t>(chosen)] = -1;
                cur.k -= 1;
            }
        }
    }

    out.pairs = std::move(pairs);
    for (const auto& [r, c] : out.pairs) out.total_cost += input.at(r, c);
    std::vector<char> row_used(static_cast<std::size_t>(input.rows), 0);
    std::vector<char> col_used(static_cast<std::size_t>(input.cols), 0);
    for (const auto& [r, c] : out.pairs) {
        row_used[static_cast<std::size_t>(r)] = 1;
        col_used[static_cast<std::size_t>(c)] = 1;
    }
    for (int r = 0; r < input.rows; ++r)
        if (!row_used[static_cast<std::size_t>(r)]) out.unmatched_rows.push_back(r);
    for (int c = 0; c < input.cols; ++c)
        if (!col_used[static_cast<std::size_t>(c)]) out.unmatched_cols.push_back(c);
    return out;
}

}  // namespace coal
