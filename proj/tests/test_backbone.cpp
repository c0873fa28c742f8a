#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csdm/backbone.hpp"
#include "csdm/data.hpp"
#include "doctest.h"

using namespace csdm;

namespace {

// Small dataset with one multi-hot side field so every gather path is
// exercised: user_id, item_id, category (one-hot side), tags (multi-hot side).
Dataset small_dataset() {
    Dataset d;
    d.n_users = 3;
    d.n_items = 4;
    d.schema.fields = {
        {"user_id", FieldKind::UserId, 3, false, false},
        {"item_id", FieldKind::ItemId, 4, false, false},
        {"category", FieldKind::ItemFeature, 3, true, false},
        {"tags", FieldKind::ItemFeature, 5, true, true},
    };
    d.schema.validate();
    d.items.field_pos = {2, 3};
    d.items.values = {
        {{0}, {1}, {2}, {1}},                      // category per item
        {{0, 2}, {1}, {3, 4}, {0, 1, 4}},          // tag lists per item
    };
    auto add = [&](int32_t u, int32_t i, int y, int64_t ts) {
        EncodedInstance e;
        e.user_idx = u;
        e.item_idx = i;
        e.feats = {u, i, d.items.values[0][i][0], -1};
        e.label = static_cast<int8_t>(y);
        e.ts = ts;
        d.instances.push_back(e);
    };
    add(0, 0, 1, 1);
    add(1, 1, 0, 2);
    add(2, 2, 1, 3);
    add(0, 3, 0, 4);
    add(1, 0, 1, 5);
    add(2, 3, 0, 6);
    return d;
}

Batch full_batch(const Dataset& d) {
    std::vector<int32_t> ids(d.instances.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = int32_t(i);
    return make_batch(d, ids);
}

std::vector<double> param_bytes(BackboneModel& m) {
    std::vector<double> out;
    for (Parameter* p : m.params())
        out.insert(out.end(), p->value.v.begin(), p->value.v.end());
    return out;
}

}  // namespace

TEST_CASE("backbone_kind_from round-trips and rejects unknown names") {
    CHECK(backbone_kind_from("deepfm") == BackboneKind::DeepFM);
    CHECK(backbone_kind_from("widedeep") == BackboneKind::WideDeep);
    CHECK(backbone_kind_from("dcn") == BackboneKind::DCN);
    CHECK(backbone_kind_name(BackboneKind::DCN) == "dcn");
    CHECK_THROWS_AS(backbone_kind_from("mlp"), ConfigError);
}

TEST_CASE("make_batch transposes instances into field columns") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    CHECK(b.n == 6);
    CHECK(b.field_idx[0] == std::vector<int32_t>{0, 1, 2, 0, 1, 2});
    CHECK(b.field_idx[1] == std::vector<int32_t>{0, 1, 2, 3, 0, 3});
    CHECK(b.field_idx[2] == std::vector<int32_t>{0, 1, 2, 1, 0, 1});
    CHECK(b.field_multi[3][0] == std::vector<int32_t>{0, 2});
    CHECK(b.field_multi[3][2] == std::vector<int32_t>{3, 4});
    CHECK(b.labels == std::vector<double>{1, 0, 1, 0, 1, 0});
    CHECK(b.item_idx == std::vector<int32_t>{0, 1, 2, 3, 0, 3});
}

TEST_CASE("DeepFM second-order term matches the pairwise-dot oracle") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    const int dim = 4;
    BackboneModel m(BackboneKind::DeepFM, d.schema, dim, 99);

    // Kill everything except the FM interaction: first-order tables, the
    // global bias, and the deep head.
    for (Parameter* p : m.params()) {
        if (p->name.rfind("lin.", 0) == 0 || p->name == "bias" ||
            p->name == "mlp.w3" || p->name == "mlp.b3")
            p->value.zero();
    }

    Tape tape;
    Var z = m.logit(tape, b);
    const Tensor& zv = tape.val(z);
    REQUIRE(zv.shape == std::vector<std::size_t>{6, 1});

    for (std::size_t i = 0; i < b.n; ++i) {
        // gather the four field vectors by hand (multi-hot = mean of rows)
        std::vector<std::vector<double>> es;
        for (int f = 0; f < 3; ++f) {
            const double* r = m.field_embedding(f).value.row(b.field_idx[f][i]);
            es.emplace_back(r, r + dim);
        }
        std::vector<double> tag(dim, 0.0);
        const auto& lists = b.field_multi[3][i];
        for (int32_t t : lists) {
            const double* r = m.field_embedding(3).value.row(t);
            for (int k = 0; k < dim; ++k) tag[k] += r[k];
        }
        for (int k = 0; k < dim; ++k) tag[k] /= double(lists.size());
        es.push_back(tag);

        double oracle = 0.0;
        for (std::size_t a = 0; a < es.size(); ++a)
            for (std::size_t c = a + 1; c < es.size(); ++c)
                for (int k = 0; k < dim; ++k) oracle += es[a][k] * es[c][k];
        CHECK(std::fabs(zv.at(i, 0) - oracle) < 1e-10);
    }
}

TEST_CASE("all-zero parameters predict exactly 0.5") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    for (auto kind :
         {BackboneKind::DeepFM, BackboneKind::WideDeep, BackboneKind::DCN}) {
        BackboneModel m(kind, d.schema, 4, 1);
        for (Parameter* p : m.params()) p->value.zero();
        for (double p_hat : m.predict(b)) CHECK(p_hat == 0.5);
    }
}

TEST_CASE("freeze rejects training and keeps parameters byte-identical") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    BackboneModel m(BackboneKind::DeepFM, d.schema, 4, 7);
    m.freeze();
    CHECK(m.frozen());
    CHECK_THROWS_AS(m.train_step(b, AdamConfig{}), ContractError);
    // (train_step_item_rows deliberately works on frozen models: that is the
    // warm-stage fine-tuning path, which touches only item rows)

    auto before = param_bytes(m);
    (void)m.predict(b);
    Tape tape;
    Var z = m.logit(tape, b);
    Var l = tape.bce_with_logits(z, b.labels);
    tape.backward(l);
    CHECK(param_bytes(m) == before);
    for (Parameter* p : m.params())
        for (double g : p->grad.v) CHECK(g == 0.0);
}

TEST_CASE("gradient check: DeepFM logit + BCE against central differences") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    BackboneModel m(BackboneKind::DeepFM, d.schema, 3, 21);
    // Move every weight away from the default tiny init so the rectifier
    // pre-activations sit clear of the kink: central differences across a
    // kink would otherwise poison the comparison.
    Rng init(77);
    for (Parameter* p : m.params())
        for (auto& x : p->value.v) x = init.uniform(-0.4, 0.4);

    // analytic pass
    for (Parameter* p : m.params()) p->zero_grad();
    Tape t;
    Var z = m.logit(t, b);
    Var l = t.bce_with_logits(z, b.labels);
    t.backward(l);

    const double h = 1e-5;
    for (Parameter* p : m.params()) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double analytic = p->grad.at(i);
            const double save = p->value.at(i);
            p->value.at(i) = save + h;
            BackboneModel probe = m;  // copy carries perturbed values
            probe.freeze();
            Tape tp;
            const double lp = tp.val(tp.bce_with_logits(probe.logit(tp, b),
                                                        b.labels))
                                  .at(0);
            p->value.at(i) = save - h;
            BackboneModel probe2 = m;
            probe2.freeze();
            Tape tm;
            const double lm = tm.val(tm.bce_with_logits(probe2.logit(tm, b),
                                                        b.labels))
                                  .at(0);
            p->value.at(i) = save;
            const double numeric = (lp - lm) / (2.0 * h);
            const double denom =
                std::max({1.0, std::fabs(numeric), std::fabs(analytic)});
            CHECK(std::fabs(numeric - analytic) / denom < 1e-4);
        }
    }
}

TEST_CASE("train_step lowers the loss on a fixed batch (all backbones)") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    for (auto kind :
         {BackboneKind::DeepFM, BackboneKind::WideDeep, BackboneKind::DCN}) {
        BackboneModel m(kind, d.schema, 4, 13);
        AdamConfig cfg;
        cfg.lr = 0.01;
        const double first = m.train_step(b, cfg);
        double last = first;
        for (int i = 0; i < 80; ++i) last = m.train_step(b, cfg);
        CHECK(std::isfinite(first));
        CHECK(last < first);
    }
}

TEST_CASE("train_step_item_rows updates only batch item rows") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);  // items {0,1,2,3} all present
    std::vector<int32_t> subset_ids{0, 1};  // items 0 and 1 only
    Batch sub = make_batch(d, subset_ids);

    BackboneModel m(BackboneKind::DeepFM, d.schema, 4, 31);
    // snapshot everything
    std::vector<std::vector<double>> before;
    for (Parameter* p : m.params()) before.push_back(p->value.v);
    Tensor items_before = m.item_embedding().value;

    AdamConfig cfg;
    const double loss = m.train_step_item_rows(sub, cfg);
    CHECK(std::isfinite(loss));

    // rows 0 and 1 moved, rows 2 and 3 did not
    const Tensor& items_after = m.item_embedding().value;
    bool moved01 = false;
    for (int k = 0; k < 4; ++k) {
        if (items_after.at(0, k) != items_before.at(0, k)) moved01 = true;
        if (items_after.at(1, k) != items_before.at(1, k)) moved01 = true;
        CHECK(items_after.at(2, k) == items_before.at(2, k));
        CHECK(items_after.at(3, k) == items_before.at(3, k));
    }
    CHECK(moved01);

    // every non-item parameter is byte-identical
    std::size_t pi = 0;
    for (Parameter* p : m.params()) {
        if (p != &m.item_embedding()) CHECK(p->value.v == before[pi]);
        ++pi;
    }
}

TEST_CASE("adam_step_rows dedupes repeated rows and zeroes their grads") {
    Parameter table("t", {4, 3});
    for (std::size_t i = 0; i < table.numel(); ++i) table.value.at(i) = 1.0;
    for (std::size_t k = 0; k < 3; ++k) table.grad.at(2, k) = 0.5;
    table.grad.at(0, 0) = 0.25;  // row 0 not in the update list

    Parameter single("s", {1, 3});
    for (std::size_t k = 0; k < 3; ++k) {
        single.value.at(0, k) = 1.0;
        single.grad.at(0, k) = 0.5;
    }

    std::vector<int32_t> rows{2, 2, 2};
    AdamConfig cfg;
    adam_step_rows(table, rows, cfg);
    std::vector<Parameter*> ps{&single};
    adam_step(ps, cfg);

    // repeated mentions apply exactly one update, equal to a dense step on a
    // single-row table with the same gradient
    for (std::size_t k = 0; k < 3; ++k)
        CHECK(table.value.at(2, k) == doctest::Approx(single.value.at(0, k)));
    // untouched rows keep values and grads
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(table.value.at(0, k) == 1.0);
        CHECK(table.grad.at(2, k) == 0.0);
    }
    CHECK(table.grad.at(0, 0) == 0.25);
}

TEST_CASE("item_override replaces the item embedding rows") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    BackboneModel m(BackboneKind::DeepFM, d.schema, 4, 55);
    m.freeze();

    Tape t1;
    Var base = m.logit(t1, b);

    // overriding with the actual rows reproduces the base logit
    Tensor rows({b.n, 4});
    for (std::size_t i = 0; i < b.n; ++i)
        for (int k = 0; k < 4; ++k)
            rows.at(i, k) = m.item_embedding().value.at(b.item_idx[i], k);
    Tape t2;
    Var same = m.logit(t2, b, t2.constant(rows));
    for (std::size_t i = 0; i < b.n; ++i)
        CHECK(t2.val(same).at(i, 0) ==
              doctest::Approx(t1.val(base).at(i, 0)).epsilon(1e-12));

    // a different override changes the score
    for (auto& x : rows.v) x += 0.3;
    Tape t3;
    Var diff = m.logit(t3, b, t3.constant(rows));
    bool changed = false;
    for (std::size_t i = 0; i < b.n; ++i)
        if (std::fabs(t3.val(diff).at(i, 0) - t1.val(base).at(i, 0)) > 1e-9)
            changed = true;
    CHECK(changed);
}

TEST_CASE("checkpoint round-trip preserves predictions") {
    Dataset d = small_dataset();
    Batch b = full_batch(d);
    namespace fs = std::filesystem;
    for (auto kind :
         {BackboneKind::DeepFM, BackboneKind::WideDeep, BackboneKind::DCN}) {
        BackboneModel m(kind, d.schema, 4, 17);
        AdamConfig cfg;
        for (int i = 0; i < 5; ++i) m.train_step(b, cfg);
        auto path = (fs::temp_directory_path() /
                     ("csdm_bb_" + backbone_kind_name(kind) + ".ckpt"))
                        .string();
        m.save(path);
        BackboneModel r = BackboneModel::load(path);
        CHECK(r.kind() == kind);
        CHECK(r.emb_dim() == 4);
        auto pa = m.predict(b);
        auto pb = r.predict(b);
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    }
    CHECK_THROWS_AS(BackboneModel::load("/nonexistent/model.ckpt"), IoError);
}
