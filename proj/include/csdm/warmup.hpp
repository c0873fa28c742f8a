#pragma once

#include <string>
#include <vector>

#include "csdm/backbone.hpp"
#include "csdm/data.hpp"
#include "csdm/diffusion.hpp"
#include "csdm/eval.hpp"

namespace csdm {

struct ExperimentConfig {
    std::string backbone = "deepfm";
    std::string data_source = "movielens";  // movielens | synthetic
    int32_t emb_dim = 16;
    int32_t pretrain_epochs = 3;
    int32_t diffusion_epochs = 2;
    int32_t warm_passes = 10;
    double lr = 0.001;
    int32_t batch = 2048;
    int32_t t_steps = 100;
    double beta = 1e-5;
    double rho = 0.1;
    int32_t sub_step = 5;
    double dropout_p = 0.5;
    int32_t denoiser_hidden = 64;
    int32_t threshold_n = 200;  // N
    int32_t group_k = 20;       // K
    uint64_t seed = 1;
    // synthetic-data knobs
    int32_t synth_users = 400;
    int32_t synth_items = 300;
    int32_t synth_instances = 60000;
    double synth_side_signal = 1.0;

    DiffusionConfig diffusion_config() const;
    AdamConfig adam_config() const;
    uint64_t config_hash() const;
};

struct StageReport {
    std::string stage;  // cold | warm_a | warm_b | warm_c
    double auc = 0.0;
    double rela_impr_vs_baseline = 0.0;
    double logloss = 0.0;
    double wall_clock_seconds = 0.0;
};

struct RunResult {
    std::vector<StageReport> baseline;  // 4 stages
    std::vector<StageReport> csdm;      // 4 stages
    std::vector<double> pretrain_loss_curve;     // per epoch mean
    std::vector<CsdmModel::StepLosses> diffusion_loss_curve;  // per epoch mean
};

// Backbone pretraining on old_train; returns the model frozen.
BackboneModel pretrain(const Dataset& data, const DatasetSplits& splits,
                       const ExperimentConfig& cfg,
                       std::vector<double>* loss_curve = nullptr);

// Frequency gate gamma(n) = n / (n + N).
double frequency_gate(int64_t n, int32_t threshold_n);

// Diffusion training with the combined objective over old_train.
CsdmModel train_csdm(BackboneModel& backbone, const Dataset& data,
                     const DatasetSplits& splits, const ExperimentConfig& cfg,
                     std::vector<CsdmModel::StepLosses>* curve = nullptr);

// Generate + gate-blend + overwrite the item-ID embedding rows for the given
// items. freq supplies the gate count per item.
void write_back(CsdmModel& model, BackboneModel& backbone, const Dataset& data,
                std::span<const int32_t> item_ids,
                const std::unordered_map<int32_t, int64_t>& freq,
                int32_t threshold_n);

// Score a set of instances with the (frozen or not) backbone.
ScoredSet score_set(BackboneModel& backbone, const Dataset& data,
                    std::span<const int32_t> instance_ids,
                    std::size_t batch_size);

// Full protocol: pretrain once, then run the no-warm-up baseline and CSDM on
// paired copies through cold / warm-a / warm-b / warm-c.
RunResult staged_eval(const Dataset& data, const DatasetSplits& splits,
                      const ExperimentConfig& cfg);

void write_results_csv(const std::string& path, const std::string& run_id,
                       const ExperimentConfig& cfg, const RunResult& res);
void write_plot_json(const std::string& path, const ExperimentConfig& cfg,
                     const RunResult& res);

}  // namespace csdm
