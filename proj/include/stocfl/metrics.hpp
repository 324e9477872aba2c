#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "stocfl/error.hpp"

namespace stocfl {

/// Adjusted Rand index between two labelings of the same items. Label
/// values are arbitrary; only the induced partitions matter. Both
/// partitions trivial (agreement is forced) scores 1.
inline double adjusted_rand_index(const std::vector<int>& truth, const std::vector<int>& pred) {
    if (truth.size() != pred.size()) throw dimension_error("adjusted_rand_index: length mismatch");
    if (truth.empty()) throw value_error("adjusted_rand_index: empty labeling");

    std::map<std::pair<int, int>, long long> cell;
    std::map<int, long long> row, col;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++cell[{truth[i], pred[i]}];
        ++row[truth[i]];
        ++col[pred[i]];
    }
    auto choose2 = [](long long m) { return static_cast<double>(m) * static_cast<double>(m - 1) / 2.0; };
    double index = 0.0, row_sum = 0.0, col_sum = 0.0;
    for (const auto& [key, m] : cell) index += choose2(m);
    for (const auto& [key, m] : row) row_sum += choose2(m);
    for (const auto& [key, m] : col) col_sum += choose2(m);
    double total = choose2(static_cast<long long>(truth.size()));
    double expected = total > 0.0 ? row_sum * col_sum / total : 0.0;
    double max_index = (row_sum + col_sum) / 2.0;
    double denom = max_index - expected;
    if (std::abs(denom) < 1e-12) return std::abs(index - expected) < 1e-12 ? 1.0 : 0.0;
    return (index - expected) / denom;
}

/// Fraction of items whose cluster's majority true label matches their own.
inline double purity(const std::vector<int>& truth, const std::vector<int>& pred) {
    if (truth.size() != pred.size()) throw dimension_error("purity: length mismatch");
    if (truth.empty()) throw value_error("purity: empty labeling");
    std::map<int, std::map<int, long long>> by_cluster;
    for (std::size_t i = 0; i < truth.size(); ++i) ++by_cluster[pred[i]][truth[i]];
    long long hit = 0;
    for (const auto& [c, counts] : by_cluster) {
        long long best = 0;
        for (const auto& [t, m] : counts) best = std::max(best, m);
        hit += best;
    }
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// One row of the per-round metrics log. Fields that a given algorithm
/// does not produce stay disengaged and serialize as empty columns.
struct RoundMetrics {
    int round = 0;
    std::optional<int> k_tilde;
    std::optional<double> clustering_objective;
    std::optional<double> global_acc;
    std::optional<double> cluster_acc;
    std::optional<double> ari;
    long long wall_ms = 0;
};

}  // namespace stocfl
