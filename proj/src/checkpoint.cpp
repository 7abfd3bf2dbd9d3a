#include "msmil/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "endian_io.hpp"
#include "msmil/error.hpp"
#include "msmil/hash.hpp"

namespace msmil {

namespace {

namespace fs = std::filesystem;
using detail::get_le;
using detail::put_le;

constexpr char kFormat[] = "msmil-checkpoint";
constexpr int kVersion = 1;
constexpr char kBlobMagic[8] = {'M', 'S', 'M', 'I', 'L', 'C', 'K', 'P'};

fs::path blob_path(const fs::path& manifest) {
    fs::path p = manifest;
    p.replace_extension(".bin");
    return p;
}

void write_blob(const fs::path& path, const std::vector<ConstParamRef>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    std::uint64_t count = 0;
    for (const auto& p : params) count += p.values.size();
    out.write(kBlobMagic, sizeof(kBlobMagic));
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, count);
    for (const auto& p : params) {
        for (double v : p.values) put_le<double>(out, v);
    }
}

void read_blob(const fs::path& path, const std::vector<ParamRef>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0) {
        throw FormatError(path.string() + ": bad magic");
    }
    if (get_le<std::uint32_t>(in, path) != kVersion) throw FormatError(path.string() + ": unsupported version");
    std::uint64_t expected = 0;
    for (const auto& p : params) expected += p.values.size();
    if (get_le<std::uint64_t>(in, path) != expected) throw FormatError(path.string() + ": parameter count mismatch");
    for (const auto& p : params) {
        for (double& v : p.values) v = get_le<double>(in, path);
    }
}

template <typename Model>
void save_impl(const fs::path& manifest, const Model& model, const CheckpointMeta& meta, const char* kind,
               nlohmann::ordered_json dims) {
    const auto params = parameters(model);
    const fs::path blob = blob_path(manifest);
    if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
    write_blob(blob, params);

    nlohmann::ordered_json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["kind"] = kind;
    j["phase"] = meta.phase;
    j["seed"] = meta.seed;
    j["dims"] = std::move(dims);
    auto& tensors = j["tensors"] = nlohmann::ordered_json::array();
    for (const auto& p : params) {
        tensors.push_back({{"name", p.name},
                           {"shape", {p.rows, p.cols}},
                           {"group", p.group == ParamGroup::backbone ? "backbone" : "head"}});
    }
    j["blob"] = blob.filename().string();
    j["blob_sha256"] = sha256_file(blob);
    j["config"] = meta.config;
    std::ofstream out(manifest, std::ios::binary);
    if (!out) throw FormatError("cannot write " + manifest.string());
    out << j.dump(2) << '\n';
}

void check_tensors(const nlohmann::json& j, const std::vector<ParamRef>& params) {
    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.size()) throw FormatError("checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors.at(i);
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        if (t.at("name").get<std::string>() != params[i].name || shape.size() != 2 || shape[0] != params[i].rows ||
            shape[1] != params[i].cols) {
            throw FormatError("checkpoint: tensor " + std::to_string(i) + " does not match " + params[i].name);
        }
    }
}

ModelDims dims_from(const nlohmann::json& d) {
    ModelDims dims;
    dims.input_dim = d.at("input_dim").get<std::size_t>();
    dims.encoder_hidden = d.at("encoder_hidden").get<std::size_t>();
    dims.embed_dim = d.at("embed_dim").get<std::size_t>();
    dims.attention_dim = d.value("attention_dim", std::size_t{1});
    dims.head_hidden = d.value("head_hidden", std::size_t{1});
    return dims;
}

void load_blob(const fs::path& manifest, const nlohmann::json& j, const std::vector<ParamRef>& params) {
    const fs::path blob = blob_path(manifest);
    if (!fs::exists(blob)) throw FormatError("checkpoint blob missing: " + blob.string());
    if (sha256_file(blob) != j.at("blob_sha256").get<std::string>()) {
        throw FormatError(blob.string() + ": checksum does not match the manifest");
    }
    read_blob(blob, params);
}

template <typename Fn>
auto with_format_errors(const fs::path& path, Fn&& fn) {
    try {
        return fn();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace

nlohmann::json read_checkpoint_manifest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw FormatError("cannot open checkpoint " + manifest.string());
    return with_format_errors(manifest, [&] {
        nlohmann::json j;
        in >> j;
        if (j.at("format").get<std::string>() != kFormat) throw FormatError(manifest.string() + ": not a checkpoint");
        if (j.at("version").get<int>() != kVersion) throw FormatError(manifest.string() + ": unsupported version");
        return j;
    });
}

void save_checkpoint(const fs::path& manifest, const MilModel& model, const CheckpointMeta& meta) {
    const auto d = model.dims();
    save_impl(manifest, model, meta, "mil",
              {{"input_dim", d.input_dim},
               {"encoder_hidden", d.encoder_hidden},
               {"embed_dim", d.embed_dim},
               {"attention_dim", d.attention_dim},
               {"head_hidden", d.head_hidden},
               {"head_dropout", model.head_dropout}});
}

void save_checkpoint(const fs::path& manifest, const SliceModel& model, const CheckpointMeta& meta) {
    save_impl(manifest, model, meta, "slice",
              {{"input_dim", model.encoder.input_dim()},
               {"encoder_hidden", model.encoder.hidden.out()},
               {"embed_dim", model.encoder.embed_dim()},
               {"dropout", model.dropout}});
}

ModelKind checkpoint_kind(const fs::path& manifest) {
    const auto j = read_checkpoint_manifest(manifest);
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "mil") return ModelKind::mil;
    if (kind == "slice") return ModelKind::slice;
    throw FormatError(manifest.string() + ": unknown model kind '" + kind + "'");
}

MilModel load_mil_checkpoint(const fs::path& manifest) {
    const auto j = read_checkpoint_manifest(manifest);
    return with_format_errors(manifest, [&] {
        if (j.at("kind").get<std::string>() != "mil") throw FormatError(manifest.string() + ": not a MIL checkpoint");
        const auto& d = j.at("dims");
        RngStream unused(0);
        MilModel model = init_mil_model(dims_from(d), d.at("head_dropout").get<double>(), unused);
        const auto params = parameters(model);
        check_tensors(j, params);
        load_blob(manifest, j, params);
        return model;
    });
}

SliceModel load_slice_checkpoint(const fs::path& manifest) {
    const auto j = read_checkpoint_manifest(manifest);
    return with_format_errors(manifest, [&] {
        if (j.at("kind").get<std::string>() != "slice") throw FormatError(manifest.string() + ": not a slice checkpoint");
        const auto& d = j.at("dims");
        RngStream unused(0);
        SliceModel model = init_slice_model(dims_from(d), d.at("dropout").get<double>(), unused);
        const auto params = parameters(model);
        check_tensors(j, params);
        load_blob(manifest, j, params);
        return model;
    });
}

}  // namespace msmil
