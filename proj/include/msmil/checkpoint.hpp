#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "msmil/model.hpp"

namespace msmil {

enum class ModelKind { mil, slice };

/// Free-form provenance stored in the manifest.
struct CheckpointMeta {
    std::string phase;
    std::uint64_t seed = 0;
    nlohmann::ordered_json config;
};

/// A checkpoint is a JSON manifest (`<stem>.json`) plus a parameter blob
/// that always sits beside it as `<stem>.bin`. The manifest lists
/// format/version, model kind, dims, dropout, and every tensor's name, shape
/// and group in declaration order.
/// The blob is "MSMILCKP", uint32 version, uint64 value count, then the
/// float64 values of all tensors in that order, little-endian.
void save_checkpoint(const std::filesystem::path& manifest, const MilModel& model, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& manifest, const SliceModel& model, const CheckpointMeta& meta);

ModelKind checkpoint_kind(const std::filesystem::path& manifest);
MilModel load_mil_checkpoint(const std::filesystem::path& manifest);
SliceModel load_slice_checkpoint(const std::filesystem::path& manifest);
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& manifest);

}  // namespace msmil
