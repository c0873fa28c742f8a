#include "csdm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csdm/tape.hpp"

namespace csdm {

double auc(const ScoredSet& set) {
    const std::size_t n = set.size();
    if (set.labels.size() != n) throw MetricError("auc: size mismatch");
    std::size_t n_pos = 0;
    for (int y : set.labels) {
        if (y != 0 && y != 1) throw MetricError("auc: label must be 0 or 1");
        n_pos += static_cast<std::size_t>(y);
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw MetricError("auc: undefined for single-class input");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return set.scores[a] < set.scores[b];
    });

    // Sum of average ranks of the positives (1-based ranks).
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && set.scores[order[j]] == set.scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (set.labels[order[k]] == 1) rank_sum += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double rela_impr(double model_auc, double baseline_auc) {
    if (baseline_auc == 0.5)
        throw MetricError("rela_impr: baseline AUC of 0.5 leaves the metric undefined");
    return ((model_auc - 0.5) / (baseline_auc - 0.5) - 1.0) * 100.0;
}

double logloss(const ScoredSet& set) {
    if (set.size() == 0) throw MetricError("logloss: empty set");
    double acc = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i)
        acc += bce_loss(set.scores[i], set.labels[i]);
    return acc / static_cast<double>(set.size());
}

}  // namespace csdm
