#include <cmath>

#include "csdm/data.hpp"
#include "csdm/rng.hpp"
#include "csdm/tape.hpp"

namespace csdm {

// Deterministic synthetic interaction generator. Click probability is a
// logistic function of latent user/item factors; item factors are pulled
// toward a per-category prototype with weight cfg.side_signal, so the side
// information (category, tag) predicts item behavior and warm-up gains are
// learnable. side_signal = 0 severs that link.
Dataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.n_users <= 0 || cfg.n_items <= 0 || cfg.n_instances <= 0)
        throw ValidationError("synth_dataset: sizes must be positive");

    constexpr int32_t kCategories = 12;
    constexpr int32_t kTags = 6;
    constexpr int32_t kGroups = 8;
    constexpr int kLatent = 8;

    Rng root(cfg.seed);
    Rng rng_proto = root.split("prototypes");
    Rng rng_items = root.split("items");
    Rng rng_users = root.split("users");
    Rng rng_inter = root.split("interactions");

    std::vector<std::vector<double>> proto(kCategories,
                                           std::vector<double>(kLatent));
    for (auto& p : proto)
        for (auto& x : p) x = rng_proto.normal();

    struct Item {
        int32_t category, tag;
        std::vector<double> f;
    };
    std::vector<Item> items(cfg.n_items);
    for (auto& it : items) {
        it.category = static_cast<int32_t>(rng_items.uniform_int(0, kCategories - 1));
        it.tag = rng_items.bernoulli(0.8)
                     ? it.category % kTags
                     : static_cast<int32_t>(rng_items.uniform_int(0, kTags - 1));
        it.f.resize(kLatent);
        for (int d = 0; d < kLatent; ++d)
            it.f[d] = cfg.side_signal * proto[it.category][d] +
                      0.5 * rng_items.normal();
    }

    struct User {
        int32_t group;
        std::vector<double> f;
    };
    std::vector<User> users(cfg.n_users);
    for (auto& u : users) {
        u.group = static_cast<int32_t>(rng_users.uniform_int(0, kGroups - 1));
        u.f.resize(kLatent);
        for (auto& x : u.f) x = rng_users.normal() * 0.6;
    }

    // Zipf-ish popularity so the frequency split produces a long tail.
    std::vector<double> pop(cfg.n_items);
    double pop_sum = 0.0;
    for (int32_t i = 0; i < cfg.n_items; ++i) {
        pop[i] = 1.0 / std::pow(static_cast<double>(i + 1), 0.85);
        pop_sum += pop[i];
    }
    std::vector<double> cdf(cfg.n_items);
    double acc = 0.0;
    for (int32_t i = 0; i < cfg.n_items; ++i) {
        acc += pop[i] / pop_sum;
        cdf[i] = acc;
    }

    Dataset out;
    out.n_users = cfg.n_users;
    out.n_items = cfg.n_items;
    out.schema.fields = {
        {"user_id", FieldKind::UserId, cfg.n_users, false, false},
        {"group", FieldKind::UserFeature, kGroups, false, false},
        {"item_id", FieldKind::ItemId, cfg.n_items, false, false},
        {"category", FieldKind::ItemFeature, kCategories, true, false},
        {"tag", FieldKind::ItemFeature, kTags, true, false},
    };
    out.schema.validate();
    out.items.field_pos = {3, 4};
    out.items.values.assign(2, std::vector<std::vector<int32_t>>(cfg.n_items));
    for (int32_t i = 0; i < cfg.n_items; ++i) {
        out.items.values[0][i] = {items[i].category};
        out.items.values[1][i] = {items[i].tag};
    }

    out.instances.reserve(cfg.n_instances);
    for (int32_t k = 0; k < cfg.n_instances; ++k) {
        const double r = rng_inter.uniform();
        int32_t item = static_cast<int32_t>(
            std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
        if (item >= cfg.n_items) item = cfg.n_items - 1;
        const int32_t user =
            static_cast<int32_t>(rng_inter.uniform_int(0, cfg.n_users - 1));

        double logit = 0.0;
        for (int d = 0; d < kLatent; ++d)
            logit += users[user].f[d] * items[item].f[d];
        const int label = rng_inter.bernoulli(sigmoid_scalar(1.2 * logit)) ? 1 : 0;

        EncodedInstance e;
        e.user_idx = user;
        e.item_idx = item;
        e.feats = {user, users[user].group, item, items[item].category,
                   items[item].tag};
        e.label = static_cast<int8_t>(label);
        e.ts = k;
        out.instances.push_back(std::move(e));
    }
    return out;
}

}  // namespace csdm
