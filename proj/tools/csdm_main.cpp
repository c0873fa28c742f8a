// csdm: cold-start embedding warm-up pipeline.
//
// Subcommands: prepare-data, pretrain, train-diffusion, run-all, bench.
// Config precedence: built-in defaults < --config JSON < CSDM_* env < flags.
// Exit codes: 0 success, 1 runtime/training failure, 2 usage/config error.
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <string>

#include "CLI11.hpp"
#include "csdm/checkpoint.hpp"
#include "csdm/data.hpp"
#include "csdm/diffusion.hpp"
#include "csdm/kernels.hpp"
#include "csdm/warmup.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using csdm::ConfigError;
using csdm::ExperimentConfig;
using nlohmann::json;

namespace {

struct RunConfig {
    ExperimentConfig exp;
    std::string data_dir = "data/ml-1m";
    std::string out_dir = "out";
};

// Flat config keys and how they map onto ExperimentConfig. One table serves
// the JSON file, the CSDM_* env overrides, and the manifest echo.
void apply_key(ExperimentConfig& c, const std::string& key, const json& v) {
    auto as_i32 = [&]() { return v.is_string() ? std::stoi(v.get<std::string>())
                                               : v.get<int32_t>(); };
    auto as_f64 = [&]() { return v.is_string() ? std::stod(v.get<std::string>())
                                               : v.get<double>(); };
    if (key == "backbone") c.backbone = v.get<std::string>();
    else if (key == "data_source") c.data_source = v.get<std::string>();
    else if (key == "emb_dim") c.emb_dim = as_i32();
    else if (key == "pretrain_epochs") c.pretrain_epochs = as_i32();
    else if (key == "diffusion_epochs") c.diffusion_epochs = as_i32();
    else if (key == "warm_passes") c.warm_passes = as_i32();
    else if (key == "lr") c.lr = as_f64();
    else if (key == "batch") c.batch = as_i32();
    else if (key == "t_steps") c.t_steps = as_i32();
    else if (key == "beta") c.beta = as_f64();
    else if (key == "rho") c.rho = as_f64();
    else if (key == "sub_step") c.sub_step = as_i32();
    else if (key == "dropout_p") c.dropout_p = as_f64();
    else if (key == "denoiser_hidden") c.denoiser_hidden = as_i32();
    else if (key == "threshold_n") c.threshold_n = as_i32();
    else if (key == "group_k") c.group_k = as_i32();
    else if (key == "seed")
        c.seed = v.is_string() ? std::stoull(v.get<std::string>())
                               : v.get<uint64_t>();
    else if (key == "synth_users") c.synth_users = as_i32();
    else if (key == "synth_items") c.synth_items = as_i32();
    else if (key == "synth_instances") c.synth_instances = as_i32();
    else if (key == "synth_side_signal") c.synth_side_signal = as_f64();
    else throw ConfigError("unknown config key: " + key);
}

const char* kConfigKeys[] = {
    "backbone",       "data_source",      "emb_dim",        "pretrain_epochs",
    "diffusion_epochs", "warm_passes",    "lr",             "batch",
    "t_steps",        "beta",             "rho",            "sub_step",
    "dropout_p",      "denoiser_hidden",  "threshold_n",    "group_k",
    "seed",           "synth_users",      "synth_items",    "synth_instances",
    "synth_side_signal"};

json config_json(const ExperimentConfig& c) {
    return json{{"backbone", c.backbone},
                {"data_source", c.data_source},
                {"emb_dim", c.emb_dim},
                {"pretrain_epochs", c.pretrain_epochs},
                {"diffusion_epochs", c.diffusion_epochs},
                {"warm_passes", c.warm_passes},
                {"lr", c.lr},
                {"batch", c.batch},
                {"t_steps", c.t_steps},
                {"beta", c.beta},
                {"rho", c.rho},
                {"sub_step", c.sub_step},
                {"dropout_p", c.dropout_p},
                {"denoiser_hidden", c.denoiser_hidden},
                {"threshold_n", c.threshold_n},
                {"group_k", c.group_k},
                {"seed", c.seed},
                {"synth_users", c.synth_users},
                {"synth_items", c.synth_items},
                {"synth_instances", c.synth_instances},
                {"synth_side_signal", c.synth_side_signal}};
}

void load_config_file(ExperimentConfig& c, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must be a JSON object");
    for (auto& [key, value] : j.items()) apply_key(c, key, value);
}

void apply_env_overrides(ExperimentConfig& c) {
    for (const char* key : kConfigKeys) {
        std::string env = "CSDM_";
        for (const char* p = key; *p; ++p)
            env += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
        if (const char* v = std::getenv(env.c_str()))
            apply_key(c, key, json(std::string(v)));
    }
}

std::string cache_path(const RunConfig& rc) {
    return rc.out_dir + "/dataset.cache";
}

std::pair<csdm::Dataset, csdm::DatasetSplits> load_cache_or_die(
    const RunConfig& rc) {
    const std::string path = cache_path(rc);
    if (!fs::exists(path))
        throw ConfigError("splits cache not found: " + path +
                          " (run prepare-data first)");
    return csdm::load_dataset_cache(path);
}

int cmd_prepare_data(const RunConfig& rc, bool synthetic) {
    csdm::Dataset data;
    if (synthetic || rc.exp.data_source == "synthetic") {
        csdm::SynthConfig sc;
        sc.seed = rc.exp.seed;
        sc.n_users = rc.exp.synth_users;
        sc.n_items = rc.exp.synth_items;
        sc.n_instances = rc.exp.synth_instances;
        sc.side_signal = rc.exp.synth_side_signal;
        data = csdm::synth_dataset(sc);
    } else {
        if (!fs::is_directory(rc.data_dir))
            throw ConfigError("data dir not found: " + rc.data_dir +
                              " (pass --synthetic to generate data instead)");
        data = csdm::encode_movielens(csdm::load_movielens(rc.data_dir));
    }
    auto splits =
        csdm::split_cold_warm(data, rc.exp.threshold_n, rc.exp.group_k);
    fs::create_directories(rc.out_dir);
    csdm::save_dataset_cache(cache_path(rc), data, splits);
    const double ratio =
        splits.n_new_items == 0
            ? 0.0
            : static_cast<double>(splits.n_old_items) /
                  static_cast<double>(splits.n_new_items);
    std::printf("items: %zu old, %zu new (old:new ratio %.2f:1)\n",
                splits.n_old_items, splits.n_new_items, ratio);
    std::printf("instances: %zu old-train, %zu per warm group, %zu test\n",
                splits.old_train.size(), splits.warm_a.size(),
                splits.test.size());
    std::printf("cache: %s\n", cache_path(rc).c_str());
    return 0;
}

int cmd_pretrain(const RunConfig& rc) {
    auto [data, splits] = load_cache_or_die(rc);
    std::vector<double> curve;
    csdm::BackboneModel model = csdm::pretrain(data, splits, rc.exp, &curve);
    fs::create_directories(rc.out_dir);
    model.save(rc.out_dir + "/backbone.ckpt");
    for (std::size_t e = 0; e < curve.size(); ++e)
        std::printf("pretrain epoch %zu: mean loss %.6f\n", e + 1, curve[e]);
    std::printf("checkpoint: %s/backbone.ckpt\n", rc.out_dir.c_str());
    return 0;
}

int cmd_train_diffusion(const RunConfig& rc) {
    auto [data, splits] = load_cache_or_die(rc);
    csdm::BackboneModel backbone =
        csdm::BackboneModel::load(rc.out_dir + "/backbone.ckpt");
    backbone.freeze();
    std::vector<csdm::CsdmModel::StepLosses> curve;
    csdm::CsdmModel model =
        csdm::train_csdm(backbone, data, splits, rc.exp, &curve);
    model.save(rc.out_dir + "/diffusion.ckpt");
    for (std::size_t e = 0; e < curve.size(); ++e)
        std::printf("epoch %zu: total %.6f  ctr %.6f  noise %.6f\n", e + 1,
                    curve[e].total, curve[e].ctr, curve[e].diff);
    std::printf("checkpoint: %s/diffusion.ckpt\n", rc.out_dir.c_str());
    return 0;
}

int cmd_run_all(const RunConfig& rc) {
    auto [data, splits] = load_cache_or_die(rc);
    const auto steps = csdm::subsequence(rc.exp.t_steps, rc.exp.sub_step);
    std::printf("generation chain: %zu grid points (stride %d over %d steps)\n",
                steps.size(), rc.exp.sub_step, rc.exp.t_steps);
    csdm::RunResult res = csdm::staged_eval(data, splits, rc.exp);
    fs::create_directories(rc.out_dir);
    char run_id[64];
    std::snprintf(run_id, sizeof(run_id), "%s-%016llx", rc.exp.backbone.c_str(),
                  static_cast<unsigned long long>(rc.exp.config_hash()));
    csdm::write_results_csv(rc.out_dir + "/results.csv", run_id, rc.exp, res);
    csdm::write_plot_json(rc.out_dir + "/plot.json", rc.exp, res);
    {
        json manifest;
        manifest["run_id"] = run_id;
        manifest["config"] = config_json(rc.exp);
        std::ofstream f(rc.out_dir + "/manifest.json", std::ios::trunc);
        f << manifest.dump(2) << "\n";
    }
    for (std::size_t i = 0; i < res.baseline.size(); ++i)
        std::printf("%-7s baseline %.4f  csdm %.4f  (relaimpr %+.2f%%)\n",
                    res.csdm[i].stage.c_str(), res.baseline[i].auc,
                    res.csdm[i].auc, res.csdm[i].rela_impr_vs_baseline);
    std::printf("results: %s/results.csv\n", rc.out_dir.c_str());
    return 0;
}

int cmd_bench(const RunConfig& rc) {
    using Clock = std::chrono::steady_clock;
    auto [data, splits] = load_cache_or_die(rc);
    ExperimentConfig cfg = rc.exp;
    const auto adam = cfg.adam_config();
    const std::size_t bsz = static_cast<std::size_t>(cfg.batch);
    const int kBatches = 20;

    auto batch_of = [&](int i) {
        const std::size_t off =
            (static_cast<std::size_t>(i) * bsz) % splits.old_train.size();
        const std::size_t len = std::min(bsz, splits.old_train.size() - off);
        return csdm::make_batch(
            data, std::span<const int32_t>(splits.old_train.data() + off, len));
    };

    fs::create_directories(rc.out_dir);
    std::ofstream csv(rc.out_dir + "/bench.csv", std::ios::trunc);
    csv << "phase,mean_ms,cv\n";
    auto emit = [&](const std::string& phase, const std::vector<double>& ms) {
        double mean = 0, var = 0;
        for (double x : ms) mean += x;
        mean /= static_cast<double>(ms.size());
        for (double x : ms) var += (x - mean) * (x - mean);
        var /= static_cast<double>(ms.size());
        const double cv = mean > 0 ? std::sqrt(var) / mean : 0.0;
        csv << phase << "," << mean << "," << cv << "\n";
        std::printf("%-28s %8.3f ms/batch (cv %.2f)\n", phase.c_str(), mean, cv);
        return mean;
    };

    // Backbone-only training step.
    csdm::BackboneModel base(csdm::backbone_kind_from(cfg.backbone),
                             data.schema, cfg.emb_dim, cfg.seed);
    std::vector<double> ms;
    for (int i = 0; i < kBatches; ++i) {
        auto b = batch_of(i);
        auto t0 = Clock::now();
        base.train_step(b, adam);
        ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0)
                         .count());
    }
    const double backbone_ms = emit("backbone_train_step", ms);

    // Combined step at each sub-sequence stride (the stride only affects
    // generation, so the training cost should match across the two).
    csdm::BackboneModel frozen = base;
    frozen.freeze();
    double combined_ms = 0;
    for (int32_t s : {5, 10}) {
        cfg.sub_step = s;
        const auto sch = csdm::Schedule::build(cfg.t_steps, cfg.beta);
        csdm::CsdmModel model(data.schema, cfg.emb_dim, cfg.diffusion_config(),
                              sch, cfg.seed);
        csdm::Rng rng = csdm::Rng(cfg.seed).split("bench");
        ms.clear();
        for (int i = 0; i < kBatches; ++i) {
            auto b = batch_of(i);
            std::vector<double> gate(b.n, 0.0);
            auto t0 = Clock::now();
            model.combined_step(frozen, data, b, gate, adam, rng);
            ms.push_back(
                std::chrono::duration<double, std::milli>(Clock::now() - t0)
                    .count());
        }
        combined_ms = emit("combined_step_s" + std::to_string(s), ms);
    }

    // Inference cost before and after write-back: the scoring path is the
    // same embedding lookup either way.
    auto time_scoring = [&](const std::string& phase) {
        ms.clear();
        for (int i = 0; i < kBatches; ++i) {
            auto b = batch_of(i);
            auto t0 = Clock::now();
            frozen.predict(b);
            ms.push_back(
                std::chrono::duration<double, std::milli>(Clock::now() - t0)
                    .count());
        }
        return emit(phase, ms);
    };
    const double before = time_scoring("inference_before_writeback");
    {
        const auto sch = csdm::Schedule::build(cfg.t_steps, cfg.beta);
        csdm::CsdmModel model(data.schema, cfg.emb_dim, cfg.diffusion_config(),
                              sch, cfg.seed);
        std::vector<int32_t> items(splits.new_item_ids.begin(),
                                   splits.new_item_ids.end());
        std::sort(items.begin(), items.end());
        csdm::write_back(model, frozen, data, items, splits.item_freq,
                         cfg.threshold_n);
    }
    const double after = time_scoring("inference_after_writeback");

    std::printf("combined/backbone step ratio: %.2fx; inference delta %.1f%%\n",
                combined_ms / backbone_ms, 100.0 * (after - before) / before);
    std::printf("kernels: %s\n", csdm::kernels::active().name);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion-based cold-start embedding warm-up for CTR models"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, backbone;
    uint64_t seed = 0;
    double rho = 0;
    int32_t sub_step = 0;
    bool synthetic = false;
    bool have_seed = false, have_rho = false, have_s = false,
         have_backbone = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--data-dir", data_dir, "raw dataset directory");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "RNG seed")
            ->each([&](const std::string&) { have_seed = true; });
        sub->add_flag("--synthetic", synthetic, "use generated data");
        sub->add_option("--backbone", backbone, "deepfm | widedeep | dcn")
            ->each([&](const std::string&) { have_backbone = true; });
        sub->add_option("--rho", rho, "noise-regression loss weight")
            ->each([&](const std::string&) { have_rho = true; });
        sub->add_option("--s", sub_step, "reverse sub-sequence stride")
            ->each([&](const std::string&) { have_s = true; });
    };

    CLI::App* prepare = app.add_subcommand("prepare-data",
                                           "encode + split + cache the data");
    CLI::App* pretrain = app.add_subcommand("pretrain", "train the backbone");
    CLI::App* traind =
        app.add_subcommand("train-diffusion", "train the warm-up model");
    CLI::App* runall =
        app.add_subcommand("run-all", "full staged evaluation, CSV + JSON out");
    CLI::App* bench = app.add_subcommand("bench", "per-batch timing table");
    for (CLI::App* sub : {prepare, pretrain, traind, runall, bench})
        add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        RunConfig rc;
        if (!config_path.empty()) load_config_file(rc.exp, config_path);
        apply_env_overrides(rc.exp);
        if (!data_dir.empty()) rc.data_dir = data_dir;
        if (!out_dir.empty()) rc.out_dir = out_dir;
        if (have_seed) rc.exp.seed = seed;
        if (have_backbone) rc.exp.backbone = backbone;
        if (have_rho) rc.exp.rho = rho;
        if (have_s) rc.exp.sub_step = sub_step;
        if (synthetic) rc.exp.data_source = "synthetic";
        csdm::backbone_kind_from(rc.exp.backbone);  // validate early

        if (prepare->parsed()) return cmd_prepare_data(rc, synthetic);
        if (pretrain->parsed()) return cmd_pretrain(rc);
        if (traind->parsed()) return cmd_train_diffusion(rc);
        if (runall->parsed()) return cmd_run_all(rc);
        if (bench->parsed()) return cmd_bench(rc);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
