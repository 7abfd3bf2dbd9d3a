#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msmil/numerics.hpp"

namespace msmil {

/// Acquisition site of a scan. Valid values are [0, source_count).
using SourceId = int;

enum class Split { train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

/// Label convention: 1 = COVID, 0 = non-COVID.
inline constexpr int kCovid = 1;
inline constexpr int kNonCovid = 0;

/// One scan: an ordered stack of slice embeddings plus its metadata.
struct ScanBag {
    std::string scan_id;
    SourceId source = 0;
    std::optional<int> label;
    Matrix slices;  // N x d_in, one row per slice along the axial axis

    std::size_t slice_count() const { return slices.rows(); }
    std::size_t dim() const { return slices.cols(); }
};

struct Dataset {
    Split split = Split::train;
    int source_count = 4;
    std::vector<ScanBag> bags;

    /// Number of bags per (source, label); unlabeled bags are not counted.
    std::vector<std::array<std::size_t, 2>> class_counts() const;
    const ScanBag& find(const std::string& scan_id) const;
    /// Throws FormatError on duplicate ids, out-of-range sources,
    /// inconsistent slice dimensions, empty bags, or missing labels
    /// outside the test split. Skeletons (no slices) are allowed when
    /// `require_slices` is false.
    void validate(bool require_slices = true) const;
};

struct SplitCounts {
    std::size_t covid = 0;
    std::size_t noncovid = 0;
};

/// Per-source acquisition model for the synthetic generator.
struct SourceShift {
    double scale = 1.0;         // multiplies every slice embedding
    Vector offset;              // added after scaling; empty means zero
    double positive_fraction = 0.3;  // fraction of lesion slices in a COVID scan
    double score_bias = 0.0;    // lesion-direction shift applied to val/test scans only
    SplitCounts train;
    SplitCounts val;
    SplitCounts test;
};

struct ShiftSpec {
    std::size_t d_in = 64;
    std::size_t slices_min = 50;
    std::size_t slices_max = 200;
    double lesion_separation = 3.0;  // distance between background and lesion cluster means
    double noise_std = 1.0;
    std::vector<SourceShift> sources;

    void validate() const;
    const SplitCounts& counts(std::size_t source, Split split) const;
};

/// Deterministic synthetic split. Scan ids are `<split>_s<source>_<index>`.
///
/// Every slice starts as noise_std * N(0, I). In COVID scans a contiguous
/// run of ceil(rho_s * N) slices is moved onto the lesion cluster mean
/// (lesion_separation times a seed-dependent unit direction). Val/test
/// slices of source s are then shifted by score_bias_s times the lesion
/// mean, and finally every slice is mapped to scale_s * x + offset_s.
Dataset generate_synthetic(const ShiftSpec& spec, std::uint64_t seed, Split split);

/// Unit direction shared by every lesion cluster of a generated corpus.
Vector lesion_direction(const ShiftSpec& spec, std::uint64_t seed);

/// Indices floor(j * N / K) for j in [0, K); identity when N <= K.
std::vector<std::size_t> uniform_subsample_indices(std::size_t n, std::size_t k);
ScanBag uniform_subsample(const ScanBag& bag, std::size_t k);
Matrix uniform_subsample(const Matrix& slices, std::size_t k);

}  // namespace msmil
