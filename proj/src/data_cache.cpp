#include <algorithm>
#include <fstream>

#include "csdm/data.hpp"
#include "json.hpp"

namespace csdm {

namespace {

constexpr char kMagic[] = "CSDMCACHE1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

template <typename T>
void put(std::ofstream& f, T v) {
    // Little-endian hosts only (x86/aarch64); asserted at build time.
    static_assert(std::endian::native == std::endian::little);
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw IoError("dataset cache: truncated file");
    return v;
}

void put_index_block(std::ofstream& f, const std::vector<int32_t>& ix) {
    put<uint64_t>(f, ix.size());
    f.write(reinterpret_cast<const char*>(ix.data()),
            static_cast<std::streamsize>(ix.size() * sizeof(int32_t)));
}

std::vector<int32_t> get_index_block(std::ifstream& f) {
    const auto n = get<uint64_t>(f);
    std::vector<int32_t> ix(n);
    f.read(reinterpret_cast<char*>(ix.data()),
           static_cast<std::streamsize>(n * sizeof(int32_t)));
    if (!f) throw IoError("dataset cache: truncated index block");
    return ix;
}

}  // namespace

void save_dataset_cache(const std::string& path, const Dataset& data,
                        const DatasetSplits& splits) {
    nlohmann::json header;
    header["version"] = 1;
    header["n_users"] = data.n_users;
    header["n_items"] = data.n_items;
    header["n_instances"] = data.instances.size();
    header["split"] = {{"N", splits.threshold_n},
                       {"K", splits.group_k},
                       {"n_old_items", splits.n_old_items},
                       {"n_new_items", splits.n_new_items}};
    nlohmann::json jfields = nlohmann::json::array();
    for (const auto& f : data.schema.fields)
        jfields.push_back({{"name", f.name},
                           {"kind", static_cast<int>(f.kind)},
                           {"vocab", f.vocab},
                           {"side", f.side_info},
                           {"multi", f.multi_hot}});
    header["schema"] = jfields;
    header["item_field_pos"] = data.items.field_pos;
    header["item_values"] = data.items.values;

    std::vector<std::pair<int32_t, int64_t>> freq(splits.item_freq.begin(),
                                                  splits.item_freq.end());
    std::sort(freq.begin(), freq.end());
    header["item_freq"] = freq;
    std::vector<int32_t> new_ids(splits.new_item_ids.begin(),
                                 splits.new_item_ids.end());
    std::sort(new_ids.begin(), new_ids.end());
    header["new_item_ids"] = new_ids;

    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    put<uint64_t>(f, hs.size());
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    for (const auto& e : data.instances) {
        for (int32_t x : e.feats) put<int32_t>(f, x);
        put<int32_t>(f, e.label);
        put<int64_t>(f, e.ts);
    }
    put_index_block(f, splits.old_train);
    put_index_block(f, splits.warm_a);
    put_index_block(f, splits.warm_b);
    put_index_block(f, splits.warm_c);
    put_index_block(f, splits.test);
    put_index_block(f, splits.excluded);
    if (!f) throw IoError("write failed: " + path);
}

std::pair<Dataset, DatasetSplits> load_dataset_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[kMagicLen];
    f.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!f || std::string(magic, kMagicLen) != kMagic)
        throw IoError("dataset cache: bad magic in " + path);
    const auto hlen = get<uint64_t>(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError("dataset cache: truncated header");
    const auto header = nlohmann::json::parse(hs);
    if (header.at("version").get<int>() != 1)
        throw IoError("dataset cache: unsupported version");

    Dataset data;
    data.n_users = header.at("n_users").get<int32_t>();
    data.n_items = header.at("n_items").get<int32_t>();
    for (const auto& jf : header.at("schema")) {
        FieldSpec fs;
        fs.name = jf.at("name").get<std::string>();
        fs.kind = static_cast<FieldKind>(jf.at("kind").get<int>());
        fs.vocab = jf.at("vocab").get<int32_t>();
        fs.side_info = jf.at("side").get<bool>();
        fs.multi_hot = jf.at("multi").get<bool>();
        data.schema.fields.push_back(std::move(fs));
    }
    data.schema.validate();
    data.items.field_pos = header.at("item_field_pos").get<std::vector<int>>();
    data.items.values =
        header.at("item_values")
            .get<std::vector<std::vector<std::vector<int32_t>>>>();

    const auto n_inst = header.at("n_instances").get<std::size_t>();
    const int uf = data.schema.user_field();
    const int itf = data.schema.item_field();
    data.instances.reserve(n_inst);
    for (std::size_t i = 0; i < n_inst; ++i) {
        EncodedInstance e;
        e.feats.resize(data.schema.fields.size());
        for (auto& x : e.feats) x = get<int32_t>(f);
        e.label = static_cast<int8_t>(get<int32_t>(f));
        e.ts = get<int64_t>(f);
        e.user_idx = e.feats[uf];
        e.item_idx = e.feats[itf];
        data.instances.push_back(std::move(e));
    }

    DatasetSplits splits;
    splits.threshold_n = header.at("split").at("N").get<int32_t>();
    splits.group_k = header.at("split").at("K").get<int32_t>();
    splits.n_old_items = header.at("split").at("n_old_items").get<std::size_t>();
    splits.n_new_items = header.at("split").at("n_new_items").get<std::size_t>();
    for (const auto& p :
         header.at("item_freq").get<std::vector<std::pair<int32_t, int64_t>>>())
        splits.item_freq.insert(p);
    for (int32_t id : header.at("new_item_ids").get<std::vector<int32_t>>())
        splits.new_item_ids.insert(id);
    splits.old_train = get_index_block(f);
    splits.warm_a = get_index_block(f);
    splits.warm_b = get_index_block(f);
    splits.warm_c = get_index_block(f);
    splits.test = get_index_block(f);
    splits.excluded = get_index_block(f);
    return {std::move(data), std::move(splits)};
}

}  // namespace csdm
