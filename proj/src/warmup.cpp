#include "csdm/warmup.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "csdm/checkpoint.hpp"
#include "json.hpp"

namespace csdm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<int32_t> shuffled(std::span<const int32_t> ids, Rng& rng) {
    std::vector<int32_t> out(ids.begin(), ids.end());
    for (std::size_t i = out.size(); i > 1; --i)
        std::swap(out[i - 1], out[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
    return out;
}

}  // namespace

DiffusionConfig ExperimentConfig::diffusion_config() const {
    DiffusionConfig d;
    d.rho = rho;
    d.sub_step = sub_step;
    d.dropout_p = dropout_p;
    d.hidden_dim = emb_dim;  // hidden diffusion space matches embedding dim
    d.denoiser_hidden = denoiser_hidden;
    return d;
}

AdamConfig ExperimentConfig::adam_config() const {
    AdamConfig a;
    a.lr = lr;
    return a;
}

uint64_t ExperimentConfig::config_hash() const {
    nlohmann::json j = {backbone,      data_source,   emb_dim,
                        pretrain_epochs, diffusion_epochs, warm_passes,
                        lr,            batch,         t_steps,
                        beta,          rho,           sub_step,
                        dropout_p,     denoiser_hidden, threshold_n,
                        group_k,       synth_users,   synth_items,
                        synth_instances, synth_side_signal};
    return fnv1a_hash(j.dump());
}

double frequency_gate(int64_t n, int32_t threshold_n) {
    return static_cast<double>(n) /
           (static_cast<double>(n) + static_cast<double>(threshold_n));
}

BackboneModel pretrain(const Dataset& data, const DatasetSplits& splits,
                       const ExperimentConfig& cfg,
                       std::vector<double>* loss_curve) {
    BackboneModel model(backbone_kind_from(cfg.backbone), data.schema,
                        cfg.emb_dim, cfg.seed);
    Rng rng = Rng(cfg.seed).split("pretrain");
    const AdamConfig adam = cfg.adam_config();
    const auto bsz = static_cast<std::size_t>(cfg.batch);

    int64_t step = 0;
    for (int32_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        auto order = shuffled(splits.old_train, rng);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t off = 0; off < order.size(); off += bsz) {
            const std::size_t len = std::min(bsz, order.size() - off);
            Batch b = make_batch(
                data, std::span<const int32_t>(order.data() + off, len));
            const double loss = model.train_step(b, adam);
            ++step;
            if (!std::isfinite(loss))
                throw TrainingError("pretrain diverged at step " +
                                    std::to_string(step));
            loss_sum += loss;
            ++n_batches;
        }
        if (loss_curve)
            loss_curve->push_back(loss_sum / static_cast<double>(n_batches));
    }
    model.freeze();
    return model;
}

namespace {

// gamma(n_i) per batch instance.
std::vector<double> batch_gate(const Batch& b,
                               const std::unordered_map<int32_t, int64_t>& freq,
                               int32_t threshold_n) {
    std::vector<double> g(b.n);
    for (std::size_t i = 0; i < b.n; ++i) {
        auto it = freq.find(b.item_idx[i]);
        const int64_t n = it == freq.end() ? 0 : it->second;
        g[i] = frequency_gate(n, threshold_n);
    }
    return g;
}

void csdm_epoch(CsdmModel& model, BackboneModel& backbone, const Dataset& data,
                std::span<const int32_t> ids,
                const std::unordered_map<int32_t, int64_t>& freq,
                const ExperimentConfig& cfg, Rng& rng,
                CsdmModel::StepLosses* mean_out) {
    const AdamConfig adam = cfg.adam_config();
    const auto bsz = static_cast<std::size_t>(cfg.batch);
    auto order = shuffled(ids, rng);
    CsdmModel::StepLosses acc{0, 0, 0};
    std::size_t n_batches = 0;
    for (std::size_t off = 0; off < order.size(); off += bsz) {
        const std::size_t len = std::min(bsz, order.size() - off);
        Batch b =
            make_batch(data, std::span<const int32_t>(order.data() + off, len));
        const auto gate = batch_gate(b, freq, cfg.threshold_n);
        const auto losses = model.combined_step(backbone, data, b, gate,
                                                adam, rng);
        acc.total += losses.total;
        acc.ctr += losses.ctr;
        acc.diff += losses.diff;
        ++n_batches;
    }
    if (mean_out && n_batches > 0) {
        const auto nb = static_cast<double>(n_batches);
        *mean_out = {acc.total / nb, acc.ctr / nb, acc.diff / nb};
    }
}

}  // namespace

CsdmModel train_csdm(BackboneModel& backbone, const Dataset& data,
                     const DatasetSplits& splits, const ExperimentConfig& cfg,
                     std::vector<CsdmModel::StepLosses>* curve) {
    if (!backbone.frozen())
        throw ContractError("train_csdm: backbone must be frozen");
    const Schedule sch = Schedule::build(cfg.t_steps, cfg.beta);
    CsdmModel model(data.schema, cfg.emb_dim, cfg.diffusion_config(), sch,
                    cfg.seed);
    Rng rng = Rng(cfg.seed).split("diffusion-train");
    for (int32_t epoch = 0; epoch < cfg.diffusion_epochs; ++epoch) {
        CsdmModel::StepLosses mean{0, 0, 0};
        csdm_epoch(model, backbone, data, splits.old_train, splits.item_freq,
                   cfg, rng, &mean);
        if (curve) curve->push_back(mean);
    }
    return model;
}

void write_back(CsdmModel& model, BackboneModel& backbone, const Dataset& data,
                std::span<const int32_t> item_ids,
                const std::unordered_map<int32_t, int64_t>& freq,
                int32_t threshold_n) {
    if (item_ids.empty()) return;
    Parameter& table = backbone.item_embedding();
    const std::size_t d = table.value.cols();
    Tensor cold({item_ids.size(), d});
    std::vector<double> gate(item_ids.size());
    for (std::size_t i = 0; i < item_ids.size(); ++i) {
        std::copy_n(table.value.row(item_ids[i]), d, cold.row(i));
        auto it = freq.find(item_ids[i]);
        gate[i] = frequency_gate(it == freq.end() ? 0 : it->second, threshold_n);
    }
    const Tensor warmed =
        model.warm_embeddings(data.items, item_ids, cold, gate);
    for (std::size_t i = 0; i < item_ids.size(); ++i)
        std::copy_n(warmed.row(i), d, table.value.row(item_ids[i]));
}

ScoredSet score_set(BackboneModel& backbone, const Dataset& data,
                    std::span<const int32_t> instance_ids,
                    std::size_t batch_size) {
    ScoredSet out;
    for (std::size_t off = 0; off < instance_ids.size(); off += batch_size) {
        const std::size_t len = std::min(batch_size, instance_ids.size() - off);
        Batch b = make_batch(
            data, std::span<const int32_t>(instance_ids.data() + off, len));
        const auto p = backbone.predict(b);
        for (std::size_t i = 0; i < len; ++i)
            out.add(p[i], static_cast<int>(b.labels[i]));
    }
    return out;
}

namespace {

StageReport make_report(const std::string& stage, const ScoredSet& scored,
                        double seconds) {
    StageReport r;
    r.stage = stage;
    r.auc = auc(scored);
    r.logloss = logloss(scored);
    r.wall_clock_seconds = seconds;
    return r;
}

// Warm fine-tuning: item-ID embedding rows only.
void warm_finetune(BackboneModel& model, const Dataset& data,
                   std::span<const int32_t> warm_ids,
                   const ExperimentConfig& cfg, Rng& rng) {
    const AdamConfig adam = cfg.adam_config();
    const auto bsz = static_cast<std::size_t>(cfg.batch);
    for (int32_t pass = 0; pass < cfg.warm_passes; ++pass) {
        auto order = shuffled(warm_ids, rng);
        for (std::size_t off = 0; off < order.size(); off += bsz) {
            const std::size_t len = std::min(bsz, order.size() - off);
            Batch b = make_batch(
                data, std::span<const int32_t>(order.data() + off, len));
            model.train_step_item_rows(b, adam);
        }
    }
}

}  // namespace

RunResult staged_eval(const Dataset& data, const DatasetSplits& splits,
                      const ExperimentConfig& cfg) {
    RunResult result;
    static const char* kStages[] = {"warm_a", "warm_b", "warm_c"};
    const std::vector<int32_t>* warm_sets[] = {&splits.warm_a, &splits.warm_b,
                                               &splits.warm_c};
    const auto bsz = static_cast<std::size_t>(cfg.batch);

    // One pretrained checkpoint feeds both protocols (paired comparison).
    BackboneModel pretrained =
        pretrain(data, splits, cfg, &result.pretrain_loss_curve);

    // Qualifying new items: present in warm/test (excluded ones never are).
    std::vector<int32_t> new_items;
    for (int32_t id : splits.new_item_ids) {
        auto it = splits.item_freq.find(id);
        if (it != splits.item_freq.end() && it->second > 0)
            new_items.push_back(id);
    }
    std::sort(new_items.begin(), new_items.end());

    // ---- baseline: no warm-up, embeddings-only fine-tuning per stage ----
    {
        BackboneModel model = pretrained;
        Rng rng = Rng(cfg.seed).split("baseline-warm");
        auto t0 = Clock::now();
        auto scored = score_set(model, data, splits.test, bsz);
        result.baseline.push_back(
            make_report("cold", scored, seconds_since(t0)));
        for (int g = 0; g < 3; ++g) {
            t0 = Clock::now();
            warm_finetune(model, data, *warm_sets[g], cfg, rng);
            scored = score_set(model, data, splits.test, bsz);
            result.baseline.push_back(
                make_report(kStages[g], scored, seconds_since(t0)));
        }
    }

    // ---- CSDM ----
    {
        BackboneModel model = pretrained;
        auto t0 = Clock::now();
        CsdmModel diffusion = train_csdm(model, data, splits, cfg,
                                         &result.diffusion_loss_curve);

        // Warm-up embeddings replace the cold rows once (new items have seen
        // nothing yet, so the gate is 0 and the generated embedding wins);
        // the warm stages then fine-tune from that initialization, exactly
        // mirroring the baseline branch.
        std::unordered_map<int32_t, int64_t> freq;
        for (const auto& [item, n] : splits.item_freq)
            if (!splits.new_item_ids.contains(item)) freq[item] = n;

        write_back(diffusion, model, data, new_items, freq, cfg.threshold_n);
        auto scored = score_set(model, data, splits.test, bsz);
        result.csdm.push_back(make_report("cold", scored, seconds_since(t0)));

        Rng rng = Rng(cfg.seed).split("csdm-warm");
        for (int g = 0; g < 3; ++g) {
            t0 = Clock::now();
            warm_finetune(model, data, *warm_sets[g], cfg, rng);
            scored = score_set(model, data, splits.test, bsz);
            result.csdm.push_back(
                make_report(kStages[g], scored, seconds_since(t0)));
        }
    }

    for (std::size_t i = 0; i < result.csdm.size(); ++i) {
        result.baseline[i].rela_impr_vs_baseline = 0.0;
        result.csdm[i].rela_impr_vs_baseline =
            rela_impr(result.csdm[i].auc, result.baseline[i].auc);
    }
    return result;
}

void write_results_csv(const std::string& path, const std::string& run_id,
                       const ExperimentConfig& cfg, const RunResult& res) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "run_id,method,backbone,stage,auc,relaimpr,logloss,seconds\n";
    auto emit = [&](const char* method, const StageReport& r) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.6f,%.4f,%.6f,%.3f\n",
                      run_id.c_str(), method, cfg.backbone.c_str(),
                      r.stage.c_str(), r.auc, r.rela_impr_vs_baseline,
                      r.logloss, r.wall_clock_seconds);
        f << buf;
    };
    for (const auto& r : res.baseline) emit("baseline", r);
    for (const auto& r : res.csdm) emit("csdm", r);
    if (!f) throw IoError("write failed: " + path);
}

void write_plot_json(const std::string& path, const ExperimentConfig& cfg,
                     const RunResult& res) {
    nlohmann::json j;
    j["backbone"] = cfg.backbone;
    auto series = [](const std::vector<StageReport>& rs) {
        nlohmann::json s;
        for (const auto& r : rs) s[r.stage] = r.auc;
        return s;
    };
    j["auc"] = {{"baseline", series(res.baseline)},
                {"csdm", series(res.csdm)}};
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& l : res.diffusion_loss_curve)
        curve.push_back({{"total", l.total}, {"ctr", l.ctr}, {"diff", l.diff}});
    j["diffusion_loss_curve"] = curve;
    j["pretrain_loss_curve"] = res.pretrain_loss_curve;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

}  // namespace csdm
