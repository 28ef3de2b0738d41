#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hoitag/matrix.hpp"

namespace hoitag {

/// Injective pairing of prediction slots (rows) with ground-truth items
/// (columns), sorted by slot.
struct MatchAssignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    /// Ground-truth index matched to `slot`, or -1.
    long target_of(std::size_t slot) const {
        for (const auto& [i, g] : pairs)
            if (i == slot) return static_cast<long>(g);
        return -1;
    }
    friend bool operator==(const MatchAssignment&, const MatchAssignment&) = default;
};

namespace hungarian_detail {

/// Minimum cost of matching min(|rows|, |cols|) pairs within the given
/// sub-matrix (Kuhn-Munkres with potentials).
inline double solve(const Matrix& cost, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols,
                    std::vector<std::pair<std::size_t, std::size_t>>* out = nullptr) {
    if (rows.empty() || cols.empty()) return 0.0;
    const bool flip = rows.size() > cols.size();
    const auto& r = flip ? cols : rows;
    const auto& c = flip ? rows : cols;
    auto at = [&](std::size_t i, std::size_t j) { return flip ? cost(c[j], r[i]) : cost(r[i], c[j]); };
    const std::size_t n = r.size(), m = c.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] == 0) continue;
        const std::size_t i = p[j] - 1;
        total += at(i, j - 1);
        if (flip)
            pairs.emplace_back(c[j - 1], r[i]);
        else
            pairs.emplace_back(r[i], c[j - 1]);
    }
    if (out) *out = std::move(pairs);
    return total;
}

}  // namespace hungarian_detail

/// Sum of cost(i, g) over the assignment's pairs.
inline double assignment_cost(const Matrix& cost, const MatchAssignment& a) {
    double s = 0.0;
    for (const auto& [i, g] : a.pairs) s += cost(i, g);
    return s;
}

/// Minimum-total-cost injective assignment of min(K, G) pairs for a K x G
/// cost matrix. Among optimal assignments the lexicographically smallest
/// sorted pair list is returned, so ties resolve the same way every time.
inline MatchAssignment hungarian_match(const Matrix& cost) {
    for (double v : cost.values())
        if (!std::isfinite(v)) throw std::invalid_argument("hungarian_match: non-finite cost");
    MatchAssignment result;
    const std::size_t k = cost.rows(), g = cost.cols();
    if (k == 0 || g == 0) return result;

    std::vector<std::size_t> rows(k), cols(g);
    for (std::size_t i = 0; i < k; ++i) rows[i] = i;
    for (std::size_t j = 0; j < g; ++j) cols[j] = j;
    double target = hungarian_detail::solve(cost, rows, cols);
    double scale = 1.0;
    for (double v : cost.values()) scale += std::abs(v);
    const double tol = 1e-12 * scale;

    std::vector<std::size_t> free_rows = rows;
    std::vector<std::size_t> free_cols = cols;
    for (std::size_t i = 0; i < k && !free_cols.empty(); ++i) {
        free_rows.erase(std::find(free_rows.begin(), free_rows.end(), i));
        bool fixed = false;
        for (std::size_t gi = 0; gi < free_cols.size(); ++gi) {
            const std::size_t col = free_cols[gi];
            std::vector<std::size_t> rest_cols = free_cols;
            rest_cols.erase(rest_cols.begin() + static_cast<long>(gi));
            const double c = cost(i, col) + hungarian_detail::solve(cost, free_rows, rest_cols);
            if (c <= target + tol) {
                result.pairs.emplace_back(i, col);
                target -= cost(i, col);
                free_cols = std::move(rest_cols);
                fixed = true;
                break;
            }
        }
        if (!fixed && free_rows.size() < free_cols.size())
            throw std::logic_error("hungarian_match: failed to reconstruct optimal assignment");
    }
    return result;
}

}  // namespace hoitag
