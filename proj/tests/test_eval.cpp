#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "csdm/eval.hpp"
#include "csdm/rng.hpp"
#include "doctest.h"

using namespace csdm;

namespace {

// O(n^2) Mann-Whitney oracle: ties between a positive and a negative count
// as half a concordant pair.
double auc_oracle(const ScoredSet& s) {
    double num = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.labels[i] == 1) ++n_pos;
        else ++n_neg;
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.labels[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (s.labels[j] != 0) continue;
            if (s.scores[i] > s.scores[j]) num += 1.0;
            else if (s.scores[i] == s.scores[j]) num += 0.5;
        }
    }
    return num / (double(n_pos) * double(n_neg));
}

}  // namespace

TEST_CASE("auc on hand-built sets") {
    ScoredSet perfect;
    perfect.add(0.9, 1);
    perfect.add(0.8, 1);
    perfect.add(0.2, 0);
    perfect.add(0.1, 0);
    CHECK(auc(perfect) == doctest::Approx(1.0));

    ScoredSet inverted;
    inverted.add(0.1, 1);
    inverted.add(0.9, 0);
    CHECK(auc(inverted) == doctest::Approx(0.0));

    ScoredSet all_tied;
    all_tied.add(0.5, 1);
    all_tied.add(0.5, 0);
    all_tied.add(0.5, 1);
    all_tied.add(0.5, 0);
    CHECK(auc(all_tied) == doctest::Approx(0.5));

    ScoredSet mixed;  // one discordant pair out of four
    mixed.add(0.8, 1);
    mixed.add(0.6, 0);
    mixed.add(0.4, 1);
    mixed.add(0.3, 0);
    CHECK(auc(mixed) == doctest::Approx(0.75));
}

TEST_CASE("auc matches the quadratic oracle on random sets with ties") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        ScoredSet s;
        const int n = 2 + int(rng.uniform_int(0, 120));
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            // coarse grid of scores to force frequent ties
            const double score = double(rng.uniform_int(0, 9)) / 10.0;
            const int label = rng.bernoulli(0.4) ? 1 : 0;
            s.add(score, label);
            (label ? has_pos : has_neg) = true;
        }
        if (!has_pos) s.add(0.5, 1);
        if (!has_neg) s.add(0.5, 0);
        CHECK(auc(s) == doctest::Approx(auc_oracle(s)).epsilon(1e-12));
    }
}

TEST_CASE("auc error paths") {
    ScoredSet empty;
    CHECK_THROWS_AS(auc(empty), MetricError);
    ScoredSet one_class;
    one_class.add(0.3, 1);
    one_class.add(0.9, 1);
    CHECK_THROWS_AS(auc(one_class), MetricError);
}

TEST_CASE("rela_impr reference values") {
    CHECK(rela_impr(0.7443, 0.7313) == doctest::Approx(5.62).epsilon(0.002));
    CHECK(rela_impr(0.6004, 0.5958) == doctest::Approx(4.80).epsilon(0.002));
    CHECK(rela_impr(0.75, 0.75) == doctest::Approx(0.0));
    CHECK_THROWS_AS(rela_impr(0.7, 0.5), MetricError);
}

TEST_CASE("logloss clamps and averages") {
    ScoredSet s;
    s.add(0.5, 1);
    s.add(0.5, 0);
    CHECK(logloss(s) == doctest::Approx(std::log(2.0)));
    ScoredSet extremes;
    extremes.add(0.0, 1);  // clamped to 1e-7
    CHECK(logloss(extremes) == doctest::Approx(-std::log(1e-7)));
    ScoredSet empty;
    CHECK_THROWS_AS(logloss(empty), MetricError);
}
