#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "msmil/data.hpp"

namespace msmil {

namespace fs = std::filesystem;

/// Reads `scan_id,label,source`. Label may be empty (test split).
/// Bags in the result carry no slices.
Dataset load_metadata_csv(const fs::path& path, Split split, int source_count);
void write_metadata_csv(const fs::path& path, const Dataset& dataset);

/// Bag files: `<scan_id>.bin` holds the slice matrix, `<scan_id>.json` the
/// metadata sidecar. The binary layout is
///
///   bytes 0..7   magic "MSMILBAG"
///   bytes 8..11  uint32 format version (1)
///   bytes 12..19 uint64 rows (slices)
///   bytes 20..27 uint64 cols (embedding dim)
///   then rows*cols IEEE-754 float64 values, row-major
///
/// with every integer and float stored little-endian.
void write_bag(const fs::path& dir, const ScanBag& bag);
ScanBag read_bag(const fs::path& dir, const std::string& scan_id);
Matrix read_bag_matrix(const fs::path& bin_path);

/// Writes `<root>/<split>/` bag files plus `<root>/<split>_metadata.csv`.
void write_dataset(const fs::path& root, const Dataset& dataset);
/// Loads every bag in `dir`, ordered by scan id.
Dataset load_bags(const fs::path& dir, Split split, int source_count);

/// `scan_id,label` rows, in the given order.
void write_predictions_csv(const fs::path& path,
                           const std::vector<std::pair<std::string, int>>& predictions);
std::vector<std::pair<std::string, int>> read_predictions_csv(const fs::path& path);

/// Generator spec document:
///   {"schema_version": 1, "d_in", "slices_min", "slices_max",
///    "lesion_separation", "noise_std",
///    "sources": [{"scale", "offset" (number or list), "positive_fraction",
///                 "score_bias", "train": {"covid", "noncovid"}, "val": {...}, "test": {...}}]}
/// Unknown keys are rejected.
ShiftSpec shift_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ShiftSpec& spec);
ShiftSpec load_shift_spec(const fs::path& path);

// Small CSV helpers shared by the readers. Fields never contain commas or quotes.
std::vector<std::string> split_csv_line(const std::string& line);
std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                               const std::vector<std::string>& expected_header);

}  // namespace msmil
