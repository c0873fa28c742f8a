#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "csdm/rng.hpp"
#include "csdm/tape.hpp"
#include "csdm/tensor.hpp"
#include "doctest.h"

using namespace csdm;

namespace {

// Central-difference gradient check: loss() must be a pure function of the
// listed parameters' current values.
void grad_check(std::vector<Parameter*> params,
                const std::function<double(Tape&)>& loss, double h = 1e-5,
                double rel_tol = 1e-4) {
    Tape tape;
    (void)loss(tape);
    // analytic grads are now accumulated in params
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double save = p->value.at(i);
            p->value.at(i) = save + h;
            Tape tp;
            std::vector<Parameter*> tmp = params;
            for (Parameter* q : tmp) q->zero_grad();
            const double lp = loss(tp);
            for (Parameter* q : tmp) q->zero_grad();
            p->value.at(i) = save - h;
            Tape tm;
            const double lm = loss(tm);
            p->value.at(i) = save;
            for (Parameter* q : tmp) q->zero_grad();
            const double numeric = (lp - lm) / (2.0 * h);
            // rebuild analytic grad for this configuration
            Tape ta;
            const double base = loss(ta);
            (void)base;
            const double analytic = p->grad.at(i);
            const double denom =
                std::max({1.0, std::fabs(numeric), std::fabs(analytic)});
            CHECK(std::fabs(numeric - analytic) / denom < rel_tol);
            for (Parameter* q : tmp) q->zero_grad();
        }
    }
}

}  // namespace

TEST_CASE("sigmoid_scalar is stable across the double range") {
    CHECK(sigmoid_scalar(0.0) == doctest::Approx(0.5));
    CHECK(sigmoid_scalar(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
    const double tiny = sigmoid_scalar(-800.0);
    CHECK(tiny > 0.0);
    CHECK(tiny <= 1e-300);
    CHECK(sigmoid_scalar(800.0) == doctest::Approx(1.0));
    CHECK(sigmoid_scalar(3.7) + sigmoid_scalar(-3.7) == doctest::Approx(1.0));
}

TEST_CASE("bce_loss clamps probabilities and rejects bad labels") {
    CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(0.5, 0) == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(0.0, 1) == doctest::Approx(-std::log(1e-7)));
    CHECK(bce_loss(1.0, 0) == doctest::Approx(-std::log(1e-7)));
    CHECK(std::isfinite(bce_loss(1e-320, 1)));
    CHECK_THROWS_AS(bce_loss(0.5, 2), ValidationError);
    CHECK_THROWS_AS(bce_loss(0.5, -1), ValidationError);
}

TEST_CASE("plain dropout: identity paths and inverted scaling") {
    Rng rng(7);
    Tensor x({4, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x.at(i) = 1.0 + double(i);

    CHECK(dropout(x, 0.0, true, rng).v == x.v);
    CHECK(dropout(x, 0.5, false, rng).v == x.v);
    CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ValidationError);
    CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ValidationError);

    // surviving entries are scaled by 1/(1-p); expectation matches x
    const double p = 0.5;
    Tensor acc({4, 3});
    const int n_draws = 20000;
    for (int d = 0; d < n_draws; ++d) {
        Tensor y = dropout(x, p, true, rng);
        for (std::size_t i = 0; i < y.numel(); ++i) {
            const bool kept = y.at(i) != 0.0;
            if (kept) CHECK(y.at(i) == doctest::Approx(x.at(i) / (1.0 - p)));
            acc.at(i) += y.at(i);
        }
    }
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(acc.at(i) / n_draws == doctest::Approx(x.at(i)).epsilon(0.05));
}

TEST_CASE("time_encoding shape, bounds, and injectivity over the schedule") {
    std::vector<int32_t> t(101);
    for (int i = 0; i <= 100; ++i) t[i] = i;
    Tensor enc = time_encoding(t, 16);
    CHECK(enc.shape == std::vector<std::size_t>{101, 16});
    for (double v : enc.v) CHECK(std::fabs(v) <= 1.0);
    // distinct steps map to distinct rows
    for (std::size_t a = 0; a < 101; ++a) {
        for (std::size_t b = a + 1; b < 101; ++b) {
            double diff = 0.0;
            for (std::size_t k = 0; k < 16; ++k)
                diff = std::max(diff, std::fabs(enc.at(a, k) - enc.at(b, k)));
            CHECK(diff > 1e-6);
        }
    }
    CHECK_THROWS_AS(time_encoding(t, 15), ValidationError);
}

TEST_CASE("adam_step drives a quadratic to its minimum") {
    Parameter w("w", {4});
    Tensor target = Tensor::vector_of({1.0, -2.0, 0.5, 3.0});
    Rng rng(3);
    for (auto& x : w.value.v) x = rng.normal();
    AdamConfig cfg;
    cfg.lr = 0.05;
    std::vector<Parameter*> ps{&w};
    for (int it = 0; it < 2000; ++it) {
        for (std::size_t i = 0; i < 4; ++i)
            w.grad.at(i) = 2.0 * (w.value.at(i) - target.at(i));
        adam_step(ps, cfg);
    }
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(w.value.at(i) == doctest::Approx(target.at(i)).epsilon(1e-4));
    // grads are zeroed after the step
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad.at(i) == 0.0);
}

TEST_CASE("adam_step rejects non-finite gradients and names the parameter") {
    Parameter w("item_embedding", {2});
    w.grad.at(0) = std::numeric_limits<double>::quiet_NaN();
    std::vector<Parameter*> ps{&w};
    AdamConfig cfg;
    try {
        adam_step(ps, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("item_embedding") != std::string::npos);
    }
}

TEST_CASE("tape affine matches a hand-computed matrix product") {
    Parameter w("w", {3, 2});
    Parameter b("b", {2});
    // W = [[1,2],[3,4],[5,6]], b = [0.5, -0.5]
    w.value.v = {1, 2, 3, 4, 5, 6};
    b.value.v = {0.5, -0.5};
    Tape tape;
    Var x = tape.constant(Tensor({2, 3}, {1, 0, 2, -1, 1, 0}));
    Var y = tape.affine(x, w, b);
    const Tensor& out = tape.val(y);
    CHECK(out.shape == std::vector<std::size_t>{2, 2});
    CHECK(out.at(0, 0) == doctest::Approx(1 * 1 + 0 * 3 + 2 * 5 + 0.5));
    CHECK(out.at(0, 1) == doctest::Approx(1 * 2 + 0 * 4 + 2 * 6 - 0.5));
    CHECK(out.at(1, 0) == doctest::Approx(-1 * 1 + 1 * 3 + 0 * 5 + 0.5));
    CHECK(out.at(1, 1) == doctest::Approx(-1 * 2 + 1 * 4 + 0 * 6 - 0.5));
}

TEST_CASE("gradient check: affine -> relu -> affine -> bce") {
    Rng rng(42);
    Parameter w1("w1", {3, 4}), b1("b1", {4});
    Parameter w2("w2", {4, 1}), b2("b2", {1});
    for (auto* p : {&w1, &b1, &w2, &b2})
        for (auto& x : p->value.v) x = rng.uniform(-0.8, 0.8);
    Tensor xin({5, 3});
    for (auto& x : xin.v) x = rng.normal();
    std::vector<double> labels{1, 0, 1, 1, 0};

    auto loss = [&](Tape& t) {
        Var x = t.constant(xin);
        Var h = t.relu(t.affine(x, w1, b1));
        Var logit = t.affine(h, w2, b2);
        Var l = t.bce_with_logits(logit, labels);
        t.backward(l);
        return t.val(l).at(0);
    };
    grad_check({&w1, &b1, &w2, &b2}, loss);
}

TEST_CASE("gradient check: gather_rows / mul_bcast / row_sum / mse_rows") {
    Rng rng(5);
    Parameter table("table", {6, 3});
    Parameter w("w", {3, 3});
    for (auto& x : table.value.v) x = rng.uniform(-1, 1);
    for (auto& x : w.value.v) x = rng.uniform(-1, 1);
    std::vector<int32_t> idx{4, 0, 0, 5};  // repeated index -> accumulated grad
    Tensor target({4, 3});
    for (auto& x : target.v) x = rng.normal();
    Tensor scales({4, 1}, {0.5, 1.5, -1.0, 2.0});

    auto loss = [&](Tape& t) {
        Var e = t.gather_rows(table, idx);
        Var s = t.constant(scales);
        Var z = t.mul_bcast(t.linear(e, w), s);
        Var l = t.mse_rows(z, target);
        t.backward(l);
        return t.val(l).at(0);
    };
    grad_check({&table, &w}, loss);
}

TEST_CASE("gradient check: gather_mean / concat_cols / square / scale") {
    Rng rng(15);
    Parameter table("t", {5, 2});
    Parameter w("w", {4, 1}), b("b", {1});
    for (auto* p : {&table, &w, &b})
        for (auto& x : p->value.v) x = rng.uniform(-1, 1);
    std::vector<std::vector<int32_t>> lists{{0, 2, 4}, {1}, {3, 3}};
    Tensor other({3, 2});
    for (auto& x : other.v) x = rng.normal();
    std::vector<double> labels{0, 1, 0};

    auto loss = [&](Tape& t) {
        Var e = t.gather_mean(table, lists);
        Var cat = t.concat_cols({e, t.square(t.constant(other))});
        Var logit = t.scale(t.affine(cat, w, b), 0.7);
        Var l = t.bce_with_logits(logit, labels);
        t.backward(l);
        return t.val(l).at(0);
    };
    grad_check({&table, &w, &b}, loss);
}

TEST_CASE("train=false propagates values but skips parameter gradients") {
    Rng rng(9);
    Parameter w("w", {2, 2}), b("b", {2});
    Parameter table("emb", {3, 2});
    for (auto* p : {&w, &b, &table})
        for (auto& x : p->value.v) x = rng.uniform(-1, 1);
    std::vector<int32_t> idx{1, 2};
    Tensor target({2, 2});

    Tape t;
    Var e = t.gather_rows(table, idx, /*train=*/false);
    Var z = t.affine(e, w, b, /*train=*/false);
    Var l = t.mse_rows(z, target);
    t.backward(l);
    for (double g : w.grad.v) CHECK(g == 0.0);
    for (double g : b.grad.v) CHECK(g == 0.0);
    for (double g : table.grad.v) CHECK(g == 0.0);
    // values still flowed forward
    CHECK(t.val(l).at(0) > 0.0);
    // input gradients still flow through a frozen affine: a trainable gather
    // upstream of it collects gradient even though w and b stay untouched
    Tape t2;
    Var e2 = t2.gather_rows(table, idx, /*train=*/true);
    Var z2 = t2.affine(e2, w, b, /*train=*/false);
    Var l2 = t2.mse_rows(z2, target);
    t2.backward(l2);
    double gsum = 0.0;
    for (double g : table.grad.v) gsum += std::fabs(g);
    CHECK(gsum > 0.0);
    for (double g : w.grad.v) CHECK(g == 0.0);
    for (double g : b.grad.v) CHECK(g == 0.0);
}

TEST_CASE("mse_rows of a zero prediction equals the mean squared row norm") {
    Rng rng(21);
    Tensor target({8, 16});
    for (auto& x : target.v) x = rng.normal();
    double expect = 0.0;
    for (double x : target.v) expect += x * x;
    expect /= 8.0;
    Tape t;
    Var zero = t.constant(Tensor({8, 16}));
    Var l = t.mse_rows(zero, target);
    CHECK(t.val(l).at(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("tape dropout: eval mode is the identity, train mode rescales") {
    Rng rng(31);
    Tensor xin({3, 4});
    for (auto& x : xin.v) x = 1.0;
    Tape t;
    Var x = t.constant(xin);
    Var y = t.dropout(x, 0.5, /*training=*/false, rng);
    CHECK(t.val(y).v == xin.v);
    Var z = t.dropout(x, 0.5, /*training=*/true, rng);
    for (double v : t.val(z).v) CHECK((v == 0.0 || v == doctest::Approx(2.0)));
}

TEST_CASE("rng split streams are independent of call order and deterministic") {
    Rng a(123), b(123);
    CHECK(a.next() == b.next());
    Rng a1 = Rng(99).split("alpha");
    Rng a2 = Rng(99).split("beta");
    Rng a3 = Rng(99).split("alpha");
    CHECK(a1.next() == a3.next());
    CHECK(a1.next() != a2.next());
    Rng u(7);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        const int64_t k = u.uniform_int(-3, 3);
        CHECK(k >= -3);
        CHECK(k <= 3);
    }
}
