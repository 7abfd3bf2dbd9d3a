#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msmil/data.hpp"
#include "msmil/metrics.hpp"

namespace msmil {

struct ScoreRow {
    std::string scan_id;
    SourceId source = 0;
    double prob = 0.0;
};

/// Scores of one model, in file order.
struct ModelScores {
    std::string model_id;
    std::vector<ScoreRow> rows;
    std::optional<double> weight;  // validation score s_m, used by weighted fusion

    const ScoreRow* find(const std::string& scan_id) const;
};

/// Per-scan probabilities of several models. Fusion requires every model to
/// cover exactly the same scans with the same sources.
class ScoreTable {
public:
    void add(ModelScores scores);

    const std::vector<ModelScores>& models() const { return models_; }
    std::size_t model_count() const { return models_.size(); }
    /// Scan ids in the order of the first model.
    std::vector<ScoreRow> scans() const;
    /// Throws ValueError if any model misses a scan or disagrees on a source.
    void check_complete() const;

private:
    std::vector<ModelScores> models_;
};

enum class FusionRule { uniform, weighted, majority };

std::string to_string(FusionRule rule);
FusionRule parse_fusion_rule(const std::string& text);

/// Mean member probability per scan.
std::vector<ScoreRow> fuse_uniform(const ScoreTable& table);
/// sum_m (s_m / sum_j s_j) p_m per scan. Every model needs a positive weight.
std::vector<ScoreRow> fuse_weighted(const ScoreTable& table);

struct VoteRow {
    std::string scan_id;
    SourceId source = 0;
    int label = 0;
    std::size_t positive_votes = 0;
};

/// Each model thresholds its own probability with its own ThresholdMap; the
/// majority class wins. On a tie the scan is COVID iff the uniform average
/// probability is at least 0.5.
std::vector<VoteRow> fuse_majority(const ScoreTable& table, const std::vector<ThresholdMap>& thresholds);

/// `scan_id,source,prob`
void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);
ModelScores read_scores_csv(const std::filesystem::path& path, const std::string& model_id, int source_count);

/// Join scores with labels from a metadata table; every scored scan must be
/// labelled and the sources must agree.
std::vector<LabeledScore> attach_labels(const std::vector<ScoreRow>& rows, const Dataset& labels);

struct EnsembleMember {
    std::string model_id;
    std::string scores;  // path to the score CSV, relative to the manifest
    std::optional<double> weight;
};

/// JSON: {"schema_version": 1, "rule": ..., "models": [{"model_id", "scores", "weight"}]}
struct EnsembleManifest {
    FusionRule rule = FusionRule::weighted;
    std::vector<EnsembleMember> members;

    nlohmann::ordered_json to_json() const;
    static EnsembleManifest from_json(const nlohmann::json& j);
};

}  // namespace msmil
