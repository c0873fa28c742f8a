#include <algorithm>

#include "csdm/data.hpp"

namespace csdm {

DatasetSplits split_cold_warm(const Dataset& data, int32_t n, int32_t k) {
    if (n <= 0 || k <= 0)
        throw ValidationError("split: N and K must be positive");
    DatasetSplits out;
    out.threshold_n = n;
    out.group_k = k;

    std::vector<std::vector<int32_t>> by_item(data.n_items);
    for (std::size_t i = 0; i < data.instances.size(); ++i)
        by_item[data.instances[i].item_idx].push_back(static_cast<int32_t>(i));

    bool any_qualifying_new = false;
    for (int32_t item = 0; item < data.n_items; ++item) {
        auto& ix = by_item[item];
        if (ix.empty()) continue;
        const auto freq = static_cast<int64_t>(ix.size());
        if (freq > n) {
            ++out.n_old_items;
            out.old_train.insert(out.old_train.end(), ix.begin(), ix.end());
            out.item_freq[item] = freq;
            continue;
        }
        ++out.n_new_items;
        out.new_item_ids.insert(item);
        if (freq <= 3 * static_cast<int64_t>(k)) {
            // Not enough interactions to populate all warm groups and still
            // leave test data; dropped from the protocol entirely.
            out.excluded.insert(out.excluded.end(), ix.begin(), ix.end());
            out.item_freq[item] = 0;
            continue;
        }
        any_qualifying_new = true;
        // Timestamp order, ties broken by original file order (ix is already
        // in file order, stable_sort keeps it).
        std::stable_sort(ix.begin(), ix.end(), [&](int32_t a, int32_t b) {
            return data.instances[a].ts < data.instances[b].ts;
        });
        out.warm_a.insert(out.warm_a.end(), ix.begin(), ix.begin() + k);
        out.warm_b.insert(out.warm_b.end(), ix.begin() + k, ix.begin() + 2 * k);
        out.warm_c.insert(out.warm_c.end(), ix.begin() + 2 * k,
                          ix.begin() + 3 * k);
        out.test.insert(out.test.end(), ix.begin() + 3 * k, ix.end());
        out.item_freq[item] = 3 * k;
    }

    if (out.n_old_items == 0)
        throw ProtocolError("split: no items exceed frequency threshold N=" +
                            std::to_string(n));
    if (!any_qualifying_new)
        throw ProtocolError("split: no new item has more than 3K=" +
                            std::to_string(3 * k) + " interactions");
    return out;
}

}  // namespace csdm
