// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>
#include <vector>

namespace coal {

// Axis-aligned box, center format, coordinates normalized to [0,1].
struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    double x1() const { return cx - w / 2.0; }
    double x2() const { return cx + w / 2.0; }
    double y1() const { return cy - h / 2.0; }
    double y2() const { return cy + h / 2.0; }
    double area() const { return w * h; }
};

// Intersection over union in [0,1]; 0 when the union is empty.
double iou(const Box& a, const Box& b);

// Dense cost matrix with an explicit infeasibility mask. Forbidden cells are
// excluded from matching outright instead of being priced with a large
// sentinel.
struct CostMatrix {
    int rows = 0, cols = 0;
    std::vector<double> cost;
    std::vector<char> feasible;

    CostMatrix() = default;
    CostMatrix(int m, int n, double fill = 0.0)
        : rows(m), cols(n), cost(static_cast<std::size_t>(m) * static_cast<std::size_t>(n), fill),
          feasible(static_cast<std::size_t>(m) * static_cast<std::size_t>(n), 1) {}

    double& at(int r, int c) { return cost[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return cost[static_cast<std::size_t>(r) * cols + c]; }
    void forbid(int r, int c) { feasible[static_cast<std::size_t>(r) * cols + c] = 0; }
    bool is_feasible(int r, int c) const { return feasible[static_cast<std::size_t>(r) * cols + c] != 0; }
};

struct AssignmentResult {
    std::vector<std::pair<int, int>> pairs;  // sorted by (row, col)
    std::vector<int> unmatched_rows;
    std::vector<int> unmatched_cols;
    double total_cost = 0.0;
};

// Optimal assignment over the feasible cells: maximum cardinality first,
// then minimum cost (or maximum profit), then the lexicographically smallest
// (row, col) pair list among the remaining ties.
AssignmentResult linear_assignment(const CostMatrix& cost, bool maximize);

}  // namespace coal
