#pragma once

#include <cstdint>
#include <vector>

#include "csdm/errors.hpp"

namespace csdm {

struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;  // 0/1

    void add(double score, int label) {
        scores.push_back(score);
        labels.push_back(label);
    }
    std::size_t size() const { return scores.size(); }
};

// Rank-based (Mann-Whitney) AUC with average-rank tie handling, O(n log n).
double auc(const ScoredSet& set);

// ((model - 0.5) / (baseline - 0.5) - 1) * 100
double rela_impr(double model_auc, double baseline_auc);

// Mean binary cross entropy over the set, probabilities clamped at 1e-7.
double logloss(const ScoredSet& set);

}  // namespace csdm
