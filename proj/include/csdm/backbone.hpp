#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csdm/data.hpp"
#include "csdm/rng.hpp"
#include "csdm/tape.hpp"

namespace csdm {

enum class BackboneKind { DeepFM, WideDeep, DCN };

BackboneKind backbone_kind_from(const std::string& name);
std::string backbone_kind_name(BackboneKind k);

// Column-major view of a set of instances, ready for embedding lookups.
struct Batch {
    std::size_t n = 0;
    // field_idx[f][i]: index of field f for instance i (single-valued fields).
    std::vector<std::vector<int32_t>> field_idx;
    // field_multi[f][i]: index list for multi-hot fields, empty elsewhere.
    std::vector<std::vector<std::vector<int32_t>>> field_multi;
    std::vector<double> labels;
    std::vector<int32_t> item_idx;
};

Batch make_batch(const Dataset& data, std::span<const int32_t> instance_ids);

// Embedding & MLP CTR scorer. One instance owns its parameters; freeze()
// makes every subsequent forward pass skip parameter-gradient accumulation
// and rejects train_step.
class BackboneModel {
  public:
    BackboneModel(BackboneKind kind, const FeatureSchema& schema, int emb_dim,
                  uint64_t seed);

    // Pre-sigmoid score. item_override, when valid, replaces the item-ID
    // embedding rows (shape [n, d]) — this is how warmed embeddings are
    // scored during diffusion training.
    Var logit(Tape& tape, const Batch& batch,
              Var item_override = Var{});

    // p_hat per instance (inference path; no gradients are accumulated).
    std::vector<double> predict(const Batch& batch);

    // One Adam update on mean BCE over the batch; returns the pre-update loss.
    double train_step(const Batch& batch, const AdamConfig& cfg);

    // Warm-stage fine-tuning: gradients flow only into the item-ID table and
    // only the rows present in the batch are updated (row-sparse Adam).
    double train_step_item_rows(const Batch& batch, const AdamConfig& cfg);

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    BackboneKind kind() const { return kind_; }
    int emb_dim() const { return emb_dim_; }
    const FeatureSchema& schema() const { return schema_; }

    Parameter& item_embedding() { return emb_[item_field_]; }
    Parameter& field_embedding(int f) { return emb_[f]; }
    std::vector<Parameter*> params();

    void save(const std::string& path) const;
    static BackboneModel load(const std::string& path);

  private:
    void field_embeddings(Tape& tape, const Batch& batch, Var item_override,
                          bool train, std::vector<Var>& out);
    Var mlp(Tape& tape, Var x, bool train);
    Var first_order(Tape& tape, const Batch& batch, bool train);

    BackboneKind kind_;
    FeatureSchema schema_;
    int emb_dim_;
    uint64_t seed_;
    int item_field_;
    bool frozen_ = false;

    std::vector<Parameter> emb_;   // per field [vocab, d]
    std::vector<Parameter> lin_;   // per field [vocab, 1] (DeepFM / wide part)
    Parameter bias_;               // global first-order bias [1]
    Parameter w1_, b1_, w2_, b2_, w3_, b3_;  // MLP: two 16-unit layers + head
    // DCN extras: two cross layers over x0.
    Parameter cross_w_[2], cross_b_[2];
    Parameter head_w_, head_b_;  // DCN output head over [cross ++ deep]
};

// Row-sparse Adam on an embedding table: dedupes rows, updates only those,
// zeroes only their gradients.
void adam_step_rows(Parameter& table, std::span<const int32_t> rows,
                    const AdamConfig& cfg);

// Glorot-style uniform init used for dense layers.
void init_glorot(Parameter& p, Rng& rng);
void init_uniform(Parameter& p, Rng& rng, double lo, double hi);

}  // namespace csdm
