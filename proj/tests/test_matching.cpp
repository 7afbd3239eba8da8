// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "coal/common.hpp"
#include "test_util.hpp"

using namespace coal;

TEST_CASE("iou identity, disjoint and hand geometry") {
    Box b{0.5, 0.5, 0.2, 0.3};
    CHECK(iou(b, b) == doctest::Approx(1.0));
    Box left{0.2, 0.2, 0.1, 0.1};
    Box right{0.8, 0.8, 0.1, 0.1};
    CHECK(iou(left, right) == 0.0);
    Box a{0.25, 0.25, 0.5, 0.5};
    Box c{0.5, 0.5, 0.5, 0.5};
    CHECK(std::fabs(iou(a, c) - 0.142857) < 1e-6);
}

TEST_CASE("iou is exactly symmetric") {
    Rng rng(11);
    for (int t = 0; t < 500; ++t) {
        Box a{rng.uniform(), rng.uniform(), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
        Box b{rng.uniform(), rng.uniform(), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
        CHECK(iou(a, b) == iou(b, a));
    }
}

TEST_CASE("assignment on simple cases") {
    {
        CostMatrix m(3, 3, 1.0);
        for (int i = 0; i < 3; ++i) m.at(i, i) = 0.0;
        auto res = linear_assignment(m, false);
        REQUIRE(res.pairs.size() == 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(res.pairs[static_cast<std::size_t>(i)].first == i);
            CHECK(res.pairs[static_cast<std::size_t>(i)].second == i);
        }
        CHECK(res.total_cost == 0.0);
    }
    {
        CostMatrix m(1, 1, 0.0);
        m.at(0, 0) = 3.25;
        auto res = linear_assignment(m, false);
        REQUIRE(res.pairs.size() == 1);
        CHECK(res.total_cost == 3.25);
    }
    {
        CostMatrix m(0, 4);
        auto res = linear_assignment(m, false);
        CHECK(res.pairs.empty());
        CHECK(res.unmatched_cols.size() == 4);
    }
}

TEST_CASE("forbidden entries reduce cardinality only when unavoidable") {
    // row 1 fully forbidden: only one pair possible
    CostMatrix m(2, 2, 1.0);
    m.forbid(1, 0);
    m.forbid(1, 1);
    auto res = linear_assignment(m, false);
    REQUIRE(res.pairs.size() == 1);
    CHECK(res.pairs[0].first == 0);
    CHECK(res.unmatched_rows == std::vector<int>{1});

    // forbidding the diagonal forces the off-diagonal full matching
    CostMatrix m2(2, 2, 5.0);
    m2.forbid(0, 0);
    m2.forbid(1, 1);
    auto res2 = linear_assignment(m2, false);
    REQUIRE(res2.pairs.size() == 2);
    CHECK(res2.pairs[0] == std::pair<int, int>{0, 1});
    CHECK(res2.pairs[1] == std::pair<int, int>{1, 0});
}

TEST_CASE("equal-cost ties resolve to the lexicographically smallest pairing") {
    CostMatrix m(2, 2, 0.0);  // every matching costs 0
    auto res = linear_assignment(m, false);
    REQUIRE(res.pairs.size() == 2);
    CHECK(res.pairs[0] == std::pair<int, int>{0, 0});
    CHECK(res.pairs[1] == std::pair<int, int>{1, 1});

    CostMatrix m3(3, 3, 1.0);
    auto res3 = linear_assignment(m3, true);
    for (int i = 0; i < 3; ++i) CHECK(res3.pairs[static_cast<std::size_t>(i)] == std::pair<int, int>{i, i});

    // ties that require displacing the greedy choice
    CostMatrix m4(2, 3, 0.0);
    m4.at(0, 0) = 1.0;
    m4.at(0, 1) = 2.0;
    m4.at(1, 0) = 2.0;
    m4.at(1, 1) = 3.0;
    m4.at(0, 2) = 9.0;
    m4.at(1, 2) = 9.0;
    // optima of cost 4: {(0,0),(1,1)} and {(0,1),(1,0)} -> prefer (0,0) first
    auto res4 = linear_assignment(m4, false);
    CHECK(res4.pairs[0] == std::pair<int, int>{0, 0});
    CHECK(res4.pairs[1] == std::pair<int, int>{1, 1});
}

TEST_CASE("assignment equals brute force on random instances") {
    Rng rng(12);
    int checked = 0;
    for (int m = 1; m <= 5; ++m)
        for (int n = 1; n <= 5; ++n)
            for (int t = 0; t < 60; ++t) {
                CostMatrix costs(m, n);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) {
                        costs.at(r, c) = rng.uniform(-1.0, 1.0);
                        if (t % 3 == 2 && rng.bernoulli(0.3)) costs.forbid(r, c);
                    }
                const bool maximize = t % 2 == 1;
                auto got = linear_assignment(costs, maximize);
                auto want = coal_test::brute_force_assignment(costs, maximize);
                REQUIRE(got.pairs == want.pairs);
                CHECK(got.total_cost == want.total_cost);
                CHECK(got.unmatched_rows == want.unmatched_rows);
                CHECK(got.unmatched_cols == want.unmatched_cols);
                ++checked;
            }
    CHECK(checked == 1500);
}

TEST_CASE("assignment result internal consistency") {
    Rng rng(13);
    for (int t = 0; t < 100; ++t) {
        const int m = 1 + static_cast<int>(rng.uniform_index(6));
        const int n = 1 + static_cast<int>(rng.uniform_index(6));
        CostMatrix costs(m, n);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c) costs.at(r, c) = rng.uniform(0.0, 1.0);
        auto res = linear_assignment(costs, false);
        std::set<int> rows, cols;
        double total = 0.0;
        for (const auto& [r, c] : res.pairs) {
            CHECK(rows.insert(r).second);
            CHECK(cols.insert(c).second);
            total += costs.at(r, c);
        }
        CHECK(std::fabs(total - res.total_cost) < 1e-9);
        CHECK(res.pairs.size() == static_cast<std::size_t>(std::min(m, n)));
    }
}

TEST_CASE("tie-heavy structured matrices still match brute force exactly") {
    Rng rng(14);
    int checked = 0;
    for (int m = 1; m <= 5; ++m)
        for (int n = 1; n <= 5; ++n)
            for (int t = 0; t < 120; ++t) {
                CostMatrix costs(m, n);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) {
                        // draw from {0, 0.5, 1} so equal-cost optima abound
                        costs.at(r, c) = 0.5 * static_cast<double>(rng.uniform_index(3));
                        if (rng.bernoulli(0.2)) costs.forbid(r, c);
                    }
                const bool maximize = t % 2 == 1;
                auto got = linear_assignment(costs, maximize);
                auto want = coal_test::brute_force_assignment(costs, maximize);
                REQUIRE(got.pairs == want.pairs);
                CHECK(got.total_cost == want.total_cost);
                ++checked;
            }
    CHECK(checked == 3000);
}

TEST_CASE("non-finite cost entries are rejected") {
    CostMatrix m(1, 1, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(linear_assignment(m, false), std::invalid_argument);
}
