#include "csdm/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "csdm/checkpoint.hpp"
#include "csdm/kernels.hpp"

namespace csdm {

BackboneKind backbone_kind_from(const std::string& name) {
    if (name == "deepfm") return BackboneKind::DeepFM;
    if (name == "widedeep") return BackboneKind::WideDeep;
    if (name == "dcn") return BackboneKind::DCN;
    throw ConfigError("unknown backbone '" + name +
                      "' (expected deepfm|widedeep|dcn)");
}

std::string backbone_kind_name(BackboneKind k) {
    switch (k) {
        case BackboneKind::DeepFM: return "deepfm";
        case BackboneKind::WideDeep: return "widedeep";
        case BackboneKind::DCN: return "dcn";
    }
    return "?";
}

Batch make_batch(const Dataset& data, std::span<const int32_t> instance_ids) {
    Batch b;
    b.n = instance_ids.size();
    const std::size_t nf = data.schema.fields.size();
    b.field_idx.assign(nf, {});
    b.field_multi.assign(nf, {});
    for (std::size_t f = 0; f < nf; ++f) {
        if (data.schema.fields[f].multi_hot)
            b.field_multi[f].reserve(b.n);
        else
            b.field_idx[f].reserve(b.n);
    }
    b.labels.reserve(b.n);
    b.item_idx.reserve(b.n);

    // Slot of each multi-hot field inside the item table.
    std::vector<int> item_slot(nf, -1);
    for (std::size_t s = 0; s < data.items.field_pos.size(); ++s)
        item_slot[data.items.field_pos[s]] = static_cast<int>(s);

    for (int32_t id : instance_ids) {
        const auto& e = data.instances[id];
        for (std::size_t f = 0; f < nf; ++f) {
            if (data.schema.fields[f].multi_hot)
                b.field_multi[f].push_back(
                    data.items.of(item_slot[f], e.item_idx));
            else
                b.field_idx[f].push_back(e.feats[f]);
        }
        b.labels.push_back(static_cast<double>(e.label));
        b.item_idx.push_back(e.item_idx);
    }
    return b;
}

void init_uniform(Parameter& p, Rng& rng, double lo, double hi) {
    for (auto& x : p.value.v) x = rng.uniform(lo, hi);
}

void init_glorot(Parameter& p, Rng& rng) {
    const double in = static_cast<double>(p.value.rows());
    const double out = static_cast<double>(p.value.cols());
    const double a = std::sqrt(6.0 / (in + out));
    init_uniform(p, rng, -a, a);
}

BackboneModel::BackboneModel(BackboneKind kind, const FeatureSchema& schema,
                             int emb_dim, uint64_t seed)
    : kind_(kind), schema_(schema), emb_dim_(emb_dim), seed_(seed) {
    schema_.validate();
    item_field_ = schema_.item_field();
    Rng rng = Rng(seed).split("backbone-init");

    const std::size_t nf = schema_.fields.size();
    const std::size_t d = static_cast<std::size_t>(emb_dim);
    for (std::size_t f = 0; f < nf; ++f) {
        emb_.emplace_back("emb." + schema_.fields[f].name,
                          std::vector<std::size_t>{
                              static_cast<std::size_t>(schema_.fields[f].vocab), d});
        init_uniform(emb_.back(), rng, -0.01, 0.01);
    }
    if (kind_ != BackboneKind::DCN) {
        for (std::size_t f = 0; f < nf; ++f)
            lin_.emplace_back("lin." + schema_.fields[f].name,
                              std::vector<std::size_t>{
                                  static_cast<std::size_t>(schema_.fields[f].vocab), 1});
        bias_ = Parameter("bias", {1});
    }

    const std::size_t x0 = nf * d;
    constexpr std::size_t kHidden = 16;
    w1_ = Parameter("mlp.w1", {x0, kHidden});
    b1_ = Parameter("mlp.b1", {kHidden});
    w2_ = Parameter("mlp.w2", {kHidden, kHidden});
    b2_ = Parameter("mlp.b2", {kHidden});
    init_glorot(w1_, rng);
    init_glorot(w2_, rng);
    if (kind_ == BackboneKind::DCN) {
        for (int l = 0; l < 2; ++l) {
            cross_w_[l] = Parameter("cross.w" + std::to_string(l), {x0, 1});
            cross_b_[l] = Parameter("cross.b" + std::to_string(l), {x0});
            init_glorot(cross_w_[l], rng);
        }
        head_w_ = Parameter("head.w", {x0 + kHidden, 1});
        head_b_ = Parameter("head.b", {1});
        init_glorot(head_w_, rng);
    } else {
        w3_ = Parameter("mlp.w3", {kHidden, 1});
        b3_ = Parameter("mlp.b3", {1});
        init_glorot(w3_, rng);
    }
}

std::vector<Parameter*> BackboneModel::params() {
    std::vector<Parameter*> out;
    for (auto& p : emb_) out.push_back(&p);
    for (auto& p : lin_) out.push_back(&p);
    if (kind_ != BackboneKind::DCN) out.push_back(&bias_);
    out.push_back(&w1_);
    out.push_back(&b1_);
    out.push_back(&w2_);
    out.push_back(&b2_);
    if (kind_ == BackboneKind::DCN) {
        for (int l = 0; l < 2; ++l) {
            out.push_back(&cross_w_[l]);
            out.push_back(&cross_b_[l]);
        }
        out.push_back(&head_w_);
        out.push_back(&head_b_);
    } else {
        out.push_back(&w3_);
        out.push_back(&b3_);
    }
    return out;
}

void BackboneModel::field_embeddings(Tape& tape, const Batch& batch,
                                     Var item_override, bool train,
                                     std::vector<Var>& out) {
    const std::size_t nf = schema_.fields.size();
    for (std::size_t f = 0; f < nf; ++f) {
        if (static_cast<int>(f) == item_field_ && item_override.valid()) {
            out.push_back(item_override);
        } else if (schema_.fields[f].multi_hot) {
            out.push_back(tape.gather_mean(emb_[f], batch.field_multi[f], train));
        } else {
            out.push_back(tape.gather_rows(emb_[f], batch.field_idx[f], train));
        }
    }
}

Var BackboneModel::first_order(Tape& tape, const Batch& batch, bool train) {
    std::vector<Var> terms;
    const std::size_t nf = schema_.fields.size();
    for (std::size_t f = 0; f < nf; ++f) {
        if (schema_.fields[f].multi_hot)
            terms.push_back(tape.gather_mean(lin_[f], batch.field_multi[f], train));
        else
            terms.push_back(tape.gather_rows(lin_[f], batch.field_idx[f], train));
    }
    return tape.add_rowvec(tape.sum_cols(terms), bias_, train);
}

Var BackboneModel::mlp(Tape& tape, Var x, bool train) {
    Var h = tape.relu(tape.affine(x, w1_, b1_, train));
    return tape.relu(tape.affine(h, w2_, b2_, train));
}

Var BackboneModel::logit(Tape& tape, const Batch& batch, Var item_override) {
    const bool train = !frozen_;
    std::vector<Var> es;
    field_embeddings(tape, batch, item_override, train, es);
    Var x0 = tape.concat_cols(es);

    switch (kind_) {
        case BackboneKind::DeepFM: {
            // FM second order via the sum-of-squares identity.
            Var sum_e = tape.sum_cols(es);
            Var sq_of_sum = tape.row_sum(tape.square(sum_e));
            std::vector<Var> sqs;
            for (Var e : es) sqs.push_back(tape.square(e));
            Var sum_of_sq = tape.row_sum(tape.sum_cols(sqs));
            Var fm2 = tape.scale(tape.sub(sq_of_sum, sum_of_sq), 0.5);
            Var deep = tape.affine(mlp(tape, x0, train), w3_, b3_, train);
            return tape.add(tape.add(first_order(tape, batch, train), fm2), deep);
        }
        case BackboneKind::WideDeep: {
            Var deep = tape.affine(mlp(tape, x0, train), w3_, b3_, train);
            return tape.add(first_order(tape, batch, train), deep);
        }
        case BackboneKind::DCN: {
            Var xl = x0;
            for (int l = 0; l < 2; ++l) {
                Var xw = tape.linear(xl, cross_w_[l], train);  // [n,1]
                Var crossed = tape.mul_bcast(x0, xw);
                xl = tape.add(tape.add_rowvec(crossed, cross_b_[l], train), xl);
            }
            Var deep = mlp(tape, x0, train);
            Var both = tape.concat_cols({xl, deep});
            return tape.affine(both, head_w_, head_b_, train);
        }
    }
    throw ContractError("unreachable backbone kind");
}

std::vector<double> BackboneModel::predict(const Batch& batch) {
    Tape tape;
    const bool was_frozen = frozen_;
    frozen_ = true;  // inference never accumulates parameter gradients
    Var z = logit(tape, batch);
    frozen_ = was_frozen;
    const Tensor& zv = tape.val(z);
    std::vector<double> out(batch.n);
    for (std::size_t i = 0; i < batch.n; ++i)
        out[i] = sigmoid_scalar(zv.at(i, 0));
    return out;
}

double BackboneModel::train_step(const Batch& batch, const AdamConfig& cfg) {
    if (frozen_)
        throw ContractError("train_step on a frozen backbone");
    Tape tape;
    Var z = logit(tape, batch);
    Var loss = tape.bce_with_logits(z, batch.labels);
    const double loss_val = tape.val(loss).v[0];
    tape.backward(loss);
    auto ps = params();
    adam_step(ps, cfg);
    return loss_val;
}

double BackboneModel::train_step_item_rows(const Batch& batch,
                                           const AdamConfig& cfg) {
    Tape tape;
    // Item-ID gather tracks gradients; everything else is frozen.
    Var item_e = tape.gather_rows(emb_[item_field_], batch.item_idx, true);
    const bool was_frozen = frozen_;
    frozen_ = true;
    Var z = logit(tape, batch, item_e);
    frozen_ = was_frozen;
    Var loss = tape.bce_with_logits(z, batch.labels);
    const double loss_val = tape.val(loss).v[0];
    tape.backward(loss);
    adam_step_rows(emb_[item_field_], batch.item_idx, cfg);
    return loss_val;
}

void adam_step_rows(Parameter& table, std::span<const int32_t> rows,
                    const AdamConfig& cfg) {
    std::vector<int32_t> uniq(rows.begin(), rows.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    table.step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(table.step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(table.step_count));
    const std::size_t d = table.value.cols();
    for (int32_t r : uniq) {
        const double* g = table.grad.row(r);
        for (std::size_t j = 0; j < d; ++j)
            if (!std::isfinite(g[j]))
                throw TrainingError("adam_step_rows: non-finite gradient in '" +
                                    table.name + "' row " + std::to_string(r));
        kernels::active().adam(table.value.row(r), g, table.m.row(r),
                               table.v.row(r), d, cfg.lr, cfg.beta1, cfg.beta2,
                               cfg.eps, bc1, bc2);
        std::fill_n(table.grad.row(r), d, 0.0);
    }
}

void BackboneModel::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["type"] = "backbone";
    manifest["kind"] = backbone_kind_name(kind_);
    manifest["emb_dim"] = emb_dim_;
    manifest["seed"] = seed_;
    manifest["frozen"] = frozen_;
    nlohmann::json jschema = nlohmann::json::array();
    for (const auto& f : schema_.fields)
        jschema.push_back({{"name", f.name},
                           {"kind", static_cast<int>(f.kind)},
                           {"vocab", f.vocab},
                           {"side", f.side_info},
                           {"multi", f.multi_hot}});
    manifest["schema"] = jschema;
    manifest["schema_hash"] = fnv1a_hash(jschema.dump());
    auto ps = const_cast<BackboneModel*>(this)->params();
    save_checkpoint(path, std::move(manifest), ps);
}

BackboneModel BackboneModel::load(const std::string& path) {
    // Two-phase: read manifest to rebuild the structure, then load blobs.
    std::vector<Parameter*> none;
    nlohmann::json manifest;
    {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError("cannot open checkpoint " + path);
        char magic[10];
        probe.read(magic, 10);
        uint64_t len = 0;
        probe.read(reinterpret_cast<char*>(&len), sizeof(len));
        std::string ms(len, '\0');
        probe.read(ms.data(), static_cast<std::streamsize>(len));
        if (!probe) throw IoError("checkpoint: truncated manifest");
        manifest = nlohmann::json::parse(ms);
    }
    FeatureSchema schema;
    for (const auto& jf : manifest.at("schema")) {
        FieldSpec fs;
        fs.name = jf.at("name").get<std::string>();
        fs.kind = static_cast<FieldKind>(jf.at("kind").get<int>());
        fs.vocab = jf.at("vocab").get<int32_t>();
        fs.side_info = jf.at("side").get<bool>();
        fs.multi_hot = jf.at("multi").get<bool>();
        schema.fields.push_back(std::move(fs));
    }
    BackboneModel model(backbone_kind_from(manifest.at("kind").get<std::string>()),
                        schema, manifest.at("emb_dim").get<int>(),
                        manifest.at("seed").get<uint64_t>());
    auto ps = model.params();
    load_checkpoint(path, ps);
    if (manifest.at("frozen").get<bool>()) model.freeze();
    return model;
}

}  // namespace csdm
