#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "msmil/data.hpp"
#include "msmil/rng.hpp"

namespace msmil {

struct SampleRef {
    std::size_t index = 0;
    SourceId source = 0;
    int label = 0;  // only read by the class-balanced builder
};

/// One epoch worth of batches. Every batch holds references into the
/// caller's item list.
struct EpochPlan {
    std::vector<std::vector<SampleRef>> batches;
    std::uint64_t epoch_seed = 0;
    std::vector<std::string> warnings;

    std::size_t total() const;
};

/// Center-stratified epoch. Each source pool is shuffled and the smaller
/// pools are topped up by drawing with replacement until every pool matches
/// the largest one. Pools are interleaved round-robin, cut into batches of
/// `batch_size`, and each batch is shuffled. The last batch may be short.
///
/// Throws ValueError if a declared source in [0, source_count) has no items
/// or batch_size < source_count.
EpochPlan build_epoch(const std::vector<SampleRef>& items, int source_count,
                      std::size_t batch_size, RngStream& rng);

/// Same construction over (source, class) cells. Empty cells are skipped and
/// reported in `EpochPlan::warnings`.
EpochPlan build_balanced_epoch(const std::vector<SampleRef>& items, int source_count,
                               std::size_t batch_size, RngStream& rng);

/// Plain shuffled partition, no balancing.
EpochPlan build_shuffled_epoch(const std::vector<SampleRef>& items, std::size_t batch_size,
                               RngStream& rng);

}  // namespace msmil
