#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "csdm/errors.hpp"

namespace csdm {

enum class FieldKind : int32_t {
    UserId = 0,
    ItemId = 1,
    UserFeature = 2,
    ItemFeature = 3,
    Context = 4,
};

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::Context;
    int32_t vocab = 0;
    bool side_info = false;  // member of X_v (item side information)
    bool multi_hot = false;
};

struct FeatureSchema {
    std::vector<FieldSpec> fields;

    int user_field() const;
    int item_field() const;
    std::vector<int> side_fields() const;
    std::vector<int> item_feature_fields() const;
    void validate() const;
};

// One labeled interaction. feats holds one index per schema field in schema
// order; multi-hot fields carry -1 here and are resolved through
// ItemSideInfo (they are item attributes).
struct EncodedInstance {
    int32_t user_idx = 0;
    int32_t item_idx = 0;
    std::vector<int32_t> feats;
    int8_t label = 0;
    int64_t ts = 0;
};

// Item-feature values for every item index, including items that never
// appear in any interaction. values[f][item] is the index list for the f-th
// item-feature field (singleton unless the field is multi-hot).
struct ItemSideInfo {
    std::vector<int> field_pos;  // schema positions, same order as values
    std::vector<std::vector<std::vector<int32_t>>> values;

    const std::vector<int32_t>& of(int field_slot, int32_t item) const {
        return values[field_slot][item];
    }
};

struct Dataset {
    FeatureSchema schema;
    std::vector<EncodedInstance> instances;
    ItemSideInfo items;
    int32_t n_users = 0;
    int32_t n_items = 0;
};

struct DatasetSplits {
    std::vector<int32_t> old_train;
    std::vector<int32_t> warm_a, warm_b, warm_c;
    std::vector<int32_t> test;
    std::vector<int32_t> excluded;
    std::unordered_map<int32_t, int64_t> item_freq;  // in old_train + warm sets
    std::unordered_set<int32_t> new_item_ids;
    int32_t threshold_n = 0;
    int32_t group_k = 0;

    std::size_t n_old_items = 0;
    std::size_t n_new_items = 0;  // items below threshold (incl. excluded ones)
};

// ---- MovieLens-1M ----

struct MovieLensRaw {
    struct Rating {
        int32_t user, movie, rating;
        int64_t ts;
    };
    struct User {
        char gender;
        int32_t age, occupation;
    };
    struct Movie {
        std::string title;
        int32_t year;  // release year parsed from the title, 0 if absent
        std::vector<std::string> genres;
    };
    std::vector<Rating> ratings;
    std::unordered_map<int32_t, User> users;
    std::unordered_map<int32_t, Movie> movies;
};

// Reads ratings.dat / users.dat / movies.dat ("::"-separated, Latin-1).
MovieLensRaw load_movielens(const std::string& dir);

// 1 iff rating >= 4; out-of-range ratings are rejected.
int binarize(int rating);

// Dense-encode the raw tables. Side information: release decade + genres.
Dataset encode_movielens(const MovieLensRaw& raw);

// ---- split protocol ----

// Items with frequency > n are old; each qualifying new item contributes K
// instances (by timestamp) to each warm group and the remainder to test. New
// items with fewer than 3K+1 interactions are excluded from warm/test.
DatasetSplits split_cold_warm(const Dataset& data, int32_t n, int32_t k);

// ---- synthetic dataset ----

struct SynthConfig {
    uint64_t seed = 1;
    int32_t n_users = 400;
    int32_t n_items = 300;
    int32_t n_instances = 60000;
    double side_signal = 1.0;  // 0 removes any side-information signal
};

Dataset synth_dataset(const SynthConfig& cfg);

// ---- encoded dataset cache ----

void save_dataset_cache(const std::string& path, const Dataset& data,
                        const DatasetSplits& splits);
std::pair<Dataset, DatasetSplits> load_dataset_cache(const std::string& path);

}  // namespace csdm
