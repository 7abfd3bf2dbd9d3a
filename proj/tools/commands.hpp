#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msmil/data.hpp"
#include "msmil/ensemble.hpp"
#include "msmil/metrics.hpp"

namespace msmil::cli {

namespace fs = std::filesystem;

/// Flags shared by every verb.
struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    fs::path config;
    fs::path out;
};

/// Provenance record written next to every command's outputs. Inputs and
/// outputs are listed with SHA-256 content hashes.
class RunManifest {
public:
    RunManifest(std::string command, const GlobalOptions& globals);

    void set_config(nlohmann::ordered_json config) { config_ = std::move(config); }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    void add_input(const std::string& role, const fs::path& path);
    void add_output(const fs::path& path);
    void write(const fs::path& path);

private:
    std::string command_;
    std::optional<std::uint64_t> seed_;
    unsigned threads_;
    nlohmann::ordered_json config_;
    nlohmann::ordered_json inputs_ = nlohmann::ordered_json::array();
    std::vector<fs::path> outputs_;
    std::chrono::steady_clock::time_point start_;
};

/// Line-delimited JSON events.
class EventLog {
public:
    explicit EventLog(const fs::path& path);
    void emit(const nlohmann::ordered_json& event);

private:
    std::ofstream out_;
};

/// `<root>/dataset.json`, written by gen-data.
struct DataInfo {
    int source_count = 4;
    std::size_t d_in = 0;
};
DataInfo read_data_info(const fs::path& root);
Dataset load_split(const fs::path& root, Split split);
fs::path metadata_path(const fs::path& root, Split split);

struct GenDataOptions {
    fs::path spec;
};
nlohmann::ordered_json cmd_gen_data(const GlobalOptions& g, const GenDataOptions& o);

struct PretrainOptions {
    fs::path data;
};
nlohmann::ordered_json cmd_pretrain(const GlobalOptions& g, const PretrainOptions& o);

struct TrainMilOptions {
    fs::path data;
    std::optional<fs::path> encoder;  // phase-1 checkpoint; random init when absent
};
nlohmann::ordered_json cmd_train_mil(const GlobalOptions& g, const TrainMilOptions& o);

struct ScoreOptions {
    std::vector<fs::path> models;
    fs::path data;
    Split split = Split::val;
    std::optional<std::size_t> k_eval;
};
/// One `<out>/<model stem>.csv` per model; models are scored concurrently.
nlohmann::ordered_json cmd_score(const GlobalOptions& g, const ScoreOptions& o);

struct FuseOptions {
    std::vector<fs::path> scores;
    FusionRule rule = FusionRule::weighted;
    std::vector<double> weights;
    std::vector<fs::path> thresholds;  // majority: one calibration file per model
    std::optional<fs::path> manifest;  // ensemble manifest instead of the lists above
    int source_count = 4;
};
/// Uniform and weighted rules write a score CSV; majority writes a
/// predictions CSV. An ensemble manifest is written beside the output.
nlohmann::ordered_json cmd_fuse(const GlobalOptions& g, const FuseOptions& o);

struct CalibrateOptions {
    fs::path scores;
    fs::path labels;
    ThresholdMode mode = ThresholdMode::per_source;
    int source_count = 4;
};
nlohmann::ordered_json cmd_calibrate(const GlobalOptions& g, const CalibrateOptions& o);

struct PredictOptions {
    fs::path scores;
    fs::path thresholds;
    int source_count = 4;
};
nlohmann::ordered_json cmd_predict(const GlobalOptions& g, const PredictOptions& o);

struct EvaluateOptions {
    fs::path predictions;
    fs::path labels;
    int source_count = 4;
};
nlohmann::ordered_json cmd_evaluate(const GlobalOptions& g, const EvaluateOptions& o);

struct AblationOptions {
    std::vector<fs::path> scores;
    fs::path labels;
    std::vector<double> weights;  // default: each model's per-source calibrated score
    int source_count = 4;
};

struct AblationRow {
    FusionRule rule;
    ThresholdMode mode;
    double score;
};

/// Challenge metric on one labelled set for every fusion rule and threshold
/// mode. Thresholds are swept on the same set.
std::vector<AblationRow> ablation_table(const ScoreTable& table, const Dataset& labels, int source_count);
nlohmann::ordered_json cmd_ablation(const GlobalOptions& g, const AblationOptions& o);

}  // namespace msmil::cli
