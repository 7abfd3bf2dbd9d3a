#include "msmil/data_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "msmil/error.hpp"
#include "endian_io.hpp"

namespace msmil {

namespace {

using detail::get_le;
using detail::put_le;

constexpr char kBagMagic[8] = {'M', 'S', 'M', 'I', 'L', 'B', 'A', 'G'};
constexpr std::uint32_t kBagVersion = 1;

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t start = 0;
    while (start < s.size() && s[start] == ' ') ++start;
    return s.substr(start);
}

int parse_int(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw FormatError("invalid " + what + " '" + text + "'");
    }
}

void check_scan_id(const std::string& id) {
    if (id.empty() || id.find_first_of(",\"/\\\n") != std::string::npos) {
        throw FormatError("invalid scan_id '" + id + "'");
    }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + "." + key + ": " + e.what());
    }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw FormatError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) == keys.end()) {
            throw FormatError(where + ": unknown key '" + key + "'");
        }
    }
}

SplitCounts counts_from(const nlohmann::json& j, const char* key, const std::string& where) {
    SplitCounts c;
    if (!j.contains(key)) return c;
    const auto& o = j.at(key);
    const std::string here = where + "." + key;
    reject_unknown(o, {"covid", "noncovid"}, here);
    c.covid = get_field<std::size_t>(o, "covid", 0, here);
    c.noncovid = get_field<std::size_t>(o, "noncovid", 0, here);
    return c;
}

}  // namespace

ShiftSpec shift_spec_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"schema_version", "d_in", "slices_min", "slices_max", "lesion_separation", "noise_std", "sources"},
                   "data spec");
    if (get_field<int>(j, "schema_version", 0, "data spec") != 1) {
        throw FormatError("data spec: schema_version must be 1");
    }
    ShiftSpec spec;
    spec.d_in = get_field(j, "d_in", spec.d_in, "data spec");
    spec.slices_min = get_field(j, "slices_min", spec.slices_min, "data spec");
    spec.slices_max = get_field(j, "slices_max", spec.slices_max, "data spec");
    spec.lesion_separation = get_field(j, "lesion_separation", spec.lesion_separation, "data spec");
    spec.noise_std = get_field(j, "noise_std", spec.noise_std, "data spec");
    if (!j.contains("sources") || !j.at("sources").is_array()) throw FormatError("data spec: missing sources list");
    for (std::size_t s = 0; s < j.at("sources").size(); ++s) {
        const auto& o = j.at("sources").at(s);
        const std::string where = "data spec.sources[" + std::to_string(s) + "]";
        reject_unknown(o, {"scale", "offset", "positive_fraction", "score_bias", "train", "val", "test"}, where);
        SourceShift src;
        src.scale = get_field(o, "scale", src.scale, where);
        if (o.contains("offset")) {
            if (o.at("offset").is_number()) src.offset = {o.at("offset").get<double>()};
            else src.offset = get_field<Vector>(o, "offset", {}, where);
        }
        src.positive_fraction = get_field(o, "positive_fraction", src.positive_fraction, where);
        src.score_bias = get_field(o, "score_bias", src.score_bias, where);
        src.train = counts_from(o, "train", where);
        src.val = counts_from(o, "val", where);
        src.test = counts_from(o, "test", where);
        spec.sources.push_back(std::move(src));
    }
    try {
        spec.validate();
    } catch (const ValueError& e) {
        throw FormatError(e.what());
    }
    return spec;
}

nlohmann::ordered_json to_json(const ShiftSpec& spec) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["d_in"] = spec.d_in;
    j["slices_min"] = spec.slices_min;
    j["slices_max"] = spec.slices_max;
    j["lesion_separation"] = spec.lesion_separation;
    j["noise_std"] = spec.noise_std;
    auto& sources = j["sources"] = nlohmann::ordered_json::array();
    for (const auto& s : spec.sources) {
        nlohmann::ordered_json o;
        o["scale"] = s.scale;
        if (s.offset.size() == 1) o["offset"] = s.offset[0];
        else o["offset"] = s.offset;
        o["positive_fraction"] = s.positive_fraction;
        o["score_bias"] = s.score_bias;
        o["train"] = {{"covid", s.train.covid}, {"noncovid", s.train.noncovid}};
        o["val"] = {{"covid", s.val.covid}, {"noncovid", s.val.noncovid}};
        o["test"] = {{"covid", s.test.covid}, {"noncovid", s.test.noncovid}};
        sources.push_back(o);
    }
    return j;
}

ShiftSpec load_shift_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return shift_spec_from_json(j);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(trim(field));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                               const std::vector<std::string>& expected_header) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
    const auto header = split_csv_line(trim(line));
    if (header != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw FormatError(path.string() + ": expected header '" + want + "'");
    }
    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != expected_header.size()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(expected_header.size()) + " columns");
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

Dataset load_metadata_csv(const fs::path& path, Split split, int source_count) {
    Dataset ds;
    ds.split = split;
    ds.source_count = source_count;
    for (const auto& row : read_csv(path, {"scan_id", "label", "source"})) {
        ScanBag bag;
        bag.scan_id = row[0];
        check_scan_id(bag.scan_id);
        if (!row[1].empty()) bag.label = parse_int(row[1], "label");
        bag.source = parse_int(row[2], "source");
        ds.bags.push_back(std::move(bag));
    }
    ds.validate(false);
    return ds;
}

void write_metadata_csv(const fs::path& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "scan_id,label,source\n";
    for (const auto& bag : dataset.bags) {
        out << bag.scan_id << ',';
        if (bag.label) out << *bag.label;
        out << ',' << bag.source << '\n';
    }
}

void write_bag(const fs::path& dir, const ScanBag& bag) {
    check_scan_id(bag.scan_id);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / (bag.scan_id + ".bin"), std::ios::binary);
        if (!out) throw FormatError("cannot write bag " + bag.scan_id);
        out.write(kBagMagic, sizeof(kBagMagic));
        put_le<std::uint32_t>(out, kBagVersion);
        put_le<std::uint64_t>(out, bag.slices.rows());
        put_le<std::uint64_t>(out, bag.slices.cols());
        for (double v : bag.slices.values()) put_le<double>(out, v);
    }
    nlohmann::ordered_json meta;
    meta["scan_id"] = bag.scan_id;
    meta["source"] = bag.source;
    meta["label"] = bag.label ? nlohmann::ordered_json(*bag.label) : nlohmann::ordered_json(nullptr);
    meta["slices"] = bag.slices.rows();
    meta["dim"] = bag.slices.cols();
    std::ofstream side(dir / (bag.scan_id + ".json"), std::ios::binary);
    side << meta.dump(2) << '\n';
}

Matrix read_bag_matrix(const fs::path& bin_path) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + bin_path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kBagMagic, sizeof(magic)) != 0) {
        throw FormatError(bin_path.string() + ": bad magic");
    }
    const auto version = get_le<std::uint32_t>(in, bin_path);
    if (version != kBagVersion) {
        throw FormatError(bin_path.string() + ": unsupported version " + std::to_string(version));
    }
    const auto rows = get_le<std::uint64_t>(in, bin_path);
    const auto cols = get_le<std::uint64_t>(in, bin_path);
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 20)) {
        throw FormatError(bin_path.string() + ": implausible shape");
    }
    std::vector<double> values(rows * cols);
    for (double& v : values) v = get_le<double>(in, bin_path);
    return Matrix(rows, cols, std::move(values));
}

ScanBag read_bag(const fs::path& dir, const std::string& scan_id) {
    const fs::path meta_path = dir / (scan_id + ".json");
    std::ifstream side(meta_path);
    if (!side) throw FormatError("cannot open " + meta_path.string());
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    ScanBag bag;
    try {
        bag.scan_id = meta.at("scan_id").get<std::string>();
        bag.source = meta.at("source").get<int>();
        if (!meta.at("label").is_null()) bag.label = meta.at("label").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    if (bag.scan_id != scan_id) throw FormatError(meta_path.string() + ": scan_id does not match file name");
    bag.slices = read_bag_matrix(dir / (scan_id + ".bin"));
    return bag;
}

void write_dataset(const fs::path& root, const Dataset& dataset) {
    const fs::path dir = root / to_string(dataset.split);
    fs::create_directories(dir);
    for (const auto& bag : dataset.bags) write_bag(dir, bag);
    write_metadata_csv(root / (to_string(dataset.split) + "_metadata.csv"), dataset);
}

Dataset load_bags(const fs::path& dir, Split split, int source_count) {
    if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    Dataset ds;
    ds.split = split;
    ds.source_count = source_count;
    for (const auto& id : ids) ds.bags.push_back(read_bag(dir, id));
    ds.validate(true);
    return ds;
}

void write_predictions_csv(const fs::path& path,
                           const std::vector<std::pair<std::string, int>>& predictions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "scan_id,label\n";
    for (const auto& [id, label] : predictions) out << id << ',' << label << '\n';
}

std::vector<std::pair<std::string, int>> read_predictions_csv(const fs::path& path) {
    std::vector<std::pair<std::string, int>> out;
    std::set<std::string> seen;
    for (const auto& row : read_csv(path, {"scan_id", "label"})) {
        check_scan_id(row[0]);
        if (!seen.insert(row[0]).second) {
            throw FormatError(path.string() + ": duplicate scan_id '" + row[0] + "'");
        }
        const int label = parse_int(row[1], "label");
        if (label != 0 && label != 1) throw FormatError(path.string() + ": non-binary label");
        out.emplace_back(row[0], label);
    }
    return out;
}

}  // namespace msmil
