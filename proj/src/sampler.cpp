#include "msmil/sampler.hpp"

#include <algorithm>

#include "msmil/error.hpp"

namespace msmil {

namespace {

// Shuffle every pool, top up to the largest size with replacement, shuffle
// again, then deal round-robin into batches.
EpochPlan interleave_pools(std::vector<std::vector<SampleRef>> pools, std::size_t batch_size,
                           RngStream& rng) {
    EpochPlan plan;
    plan.epoch_seed = rng.seed();
    std::size_t largest = 0;
    for (const auto& pool : pools) largest = std::max(largest, pool.size());

    for (auto& pool : pools) {
        rng.shuffle(pool);
        const std::size_t original = pool.size();
        while (pool.size() < largest) pool.push_back(pool[rng.uniform_int(original)]);
        if (pool.size() > original) rng.shuffle(pool);
    }

    std::vector<SampleRef> stream;
    stream.reserve(largest * pools.size());
    for (std::size_t i = 0; i < largest; ++i) {
        for (const auto& pool : pools) stream.push_back(pool[i]);
    }

    for (std::size_t start = 0; start < stream.size(); start += batch_size) {
        const std::size_t end = std::min(stream.size(), start + batch_size);
        std::vector<SampleRef> batch(stream.begin() + static_cast<std::ptrdiff_t>(start),
                                     stream.begin() + static_cast<std::ptrdiff_t>(end));
        rng.shuffle(batch);
        plan.batches.push_back(std::move(batch));
    }
    return plan;
}

}  // namespace

std::size_t EpochPlan::total() const {
    std::size_t n = 0;
    for (const auto& b : batches) n += b.size();
    return n;
}

EpochPlan build_epoch(const std::vector<SampleRef>& items, int source_count,
                      std::size_t batch_size, RngStream& rng) {
    if (source_count < 1) throw ValueError("build_epoch: source_count must be positive");
    if (batch_size < static_cast<std::size_t>(source_count)) {
        throw ValueError("build_epoch: batch_size must be at least the number of sources");
    }
    std::vector<std::vector<SampleRef>> pools(static_cast<std::size_t>(source_count));
    for (const auto& item : items) {
        if (item.source < 0 || item.source >= source_count) {
            throw ValueError("build_epoch: item with unknown source " + std::to_string(item.source));
        }
        pools[static_cast<std::size_t>(item.source)].push_back(item);
    }
    for (std::size_t s = 0; s < pools.size(); ++s) {
        if (pools[s].empty()) throw ValueError("build_epoch: source " + std::to_string(s) + " has no items");
    }
    return interleave_pools(std::move(pools), batch_size, rng);
}

EpochPlan build_balanced_epoch(const std::vector<SampleRef>& items, int source_count,
                               std::size_t batch_size, RngStream& rng) {
    if (source_count < 1) throw ValueError("build_balanced_epoch: source_count must be positive");
    if (batch_size == 0) throw ValueError("build_balanced_epoch: batch_size must be positive");
    std::vector<std::vector<SampleRef>> cells(2 * static_cast<std::size_t>(source_count));
    for (const auto& item : items) {
        if (item.source < 0 || item.source >= source_count) {
            throw ValueError("build_balanced_epoch: item with unknown source " + std::to_string(item.source));
        }
        if (item.label != 0 && item.label != 1) throw ValueError("build_balanced_epoch: non-binary label");
        cells[2 * static_cast<std::size_t>(item.source) + static_cast<std::size_t>(item.label)].push_back(item);
    }
    std::vector<std::string> warnings;
    std::vector<std::vector<SampleRef>> nonempty;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c].empty()) {
            warnings.push_back("source " + std::to_string(c / 2) + " has no " +
                               (c % 2 == 1 ? "COVID" : "non-COVID") + " items; cell skipped");
        } else {
            nonempty.push_back(std::move(cells[c]));
        }
    }
    if (nonempty.empty()) throw ValueError("build_balanced_epoch: no items");
    if (batch_size < nonempty.size()) {
        throw ValueError("build_balanced_epoch: batch_size must be at least the number of nonempty cells");
    }
    auto plan = interleave_pools(std::move(nonempty), batch_size, rng);
    plan.warnings = std::move(warnings);
    return plan;
}

EpochPlan build_shuffled_epoch(const std::vector<SampleRef>& items, std::size_t batch_size,
                               RngStream& rng) {
    if (batch_size == 0) throw ValueError("build_shuffled_epoch: batch_size must be positive");
    if (items.empty()) throw ValueError("build_shuffled_epoch: no items");
    return interleave_pools({items}, batch_size, rng);
}

}  // namespace msmil
