#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hoitag/hungarian.hpp"
#include "hoitag/rng.hpp"
#include "oracles.hpp"

using namespace hoitag;
using hoitag::testing::brute_force_min;

namespace {

void expect_injective(const MatchAssignment& a, std::size_t expected_pairs) {
    ASSERT_EQ(a.pairs.size(), expected_pairs);
    std::vector<std::size_t> rows, cols;
    for (auto [i, g] : a.pairs) {
        rows.push_back(i);
        cols.push_back(g);
    }
    std::sort(rows.begin(), rows.end());
    std::sort(cols.begin(), cols.end());
    EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end());
    EXPECT_EQ(std::adjacent_find(cols.begin(), cols.end()), cols.end());
}

TEST(Hungarian, TwoByTwo) {
    const Matrix cost(2, 2, std::vector<double>{1, 2, 3, 1});
    const auto a = hungarian_match(cost);
    EXPECT_EQ(a.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
    EXPECT_DOUBLE_EQ(assignment_cost(cost, a), 2.0);
}

TEST(Hungarian, ZeroDiagonalGivesIdentity) {
    Matrix cost(4, 4, 1.0);
    for (std::size_t i = 0; i < 4; ++i) cost(i, i) = 0.0;
    const auto a = hungarian_match(cost);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.target_of(i), static_cast<long>(i));
}

TEST(Hungarian, MatchesBruteForceOnRandomMatrices) {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const auto g = static_cast<std::size_t>(rng.uniform_int(1, 6));
        Matrix cost(k, g);
        for (auto& v : cost.values()) v = rng.uniform(-5.0, 5.0);
        const auto a = hungarian_match(cost);
        expect_injective(a, std::min(k, g));
        EXPECT_NEAR(assignment_cost(cost, a), brute_force_min(cost), 1e-9) << "trial " << trial;
    }
}

TEST(Hungarian, IntegerCostsWithManyTies) {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const auto g = static_cast<std::size_t>(rng.uniform_int(1, 5));
        Matrix cost(k, g);
        for (auto& v : cost.values()) v = rng.uniform_int(0, 2);
        const auto a = hungarian_match(cost);
        expect_injective(a, std::min(k, g));
        EXPECT_NEAR(assignment_cost(cost, a), brute_force_min(cost), 1e-12);
    }
}

TEST(Hungarian, TiesResolveLexicographically) {
    const auto a = hungarian_match(Matrix(3, 2, 0.0));
    EXPECT_EQ(a.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
}

TEST(Hungarian, EmptyAndInvalidInput) {
    EXPECT_TRUE(hungarian_match(Matrix(3, 0)).pairs.empty());
    EXPECT_TRUE(hungarian_match(Matrix(0, 2)).pairs.empty());
    Matrix bad(2, 2, 1.0);
    bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(hungarian_match(bad), std::invalid_argument);
}

}  // namespace
