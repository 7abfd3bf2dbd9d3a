#include "msmil/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_map>

#include "msmil/data_io.hpp"
#include "msmil/error.hpp"

namespace msmil {

namespace {

// Probabilities of every model for every scan, in scan order.
struct Aligned {
    std::vector<ScoreRow> scans;
    std::vector<std::vector<double>> probs;  // [scan][model]
};

Aligned align(const ScoreTable& table) {
    if (table.model_count() == 0) throw ValueError("fusion: no models");
    table.check_complete();
    Aligned a;
    a.scans = table.scans();
    std::vector<std::unordered_map<std::string, double>> lookup;
    for (const auto& m : table.models()) {
        auto& map = lookup.emplace_back();
        for (const auto& r : m.rows) map.emplace(r.scan_id, r.prob);
    }
    for (const auto& scan : a.scans) {
        auto& row = a.probs.emplace_back();
        for (const auto& map : lookup) row.push_back(map.at(scan.scan_id));
    }
    return a;
}

double parse_double(const std::string& text, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
        throw FormatError(where + ": invalid number '" + text + "'");
    }
    return v;
}

}  // namespace

const ScoreRow* ModelScores::find(const std::string& scan_id) const {
    for (const auto& r : rows) {
        if (r.scan_id == scan_id) return &r;
    }
    return nullptr;
}

void ScoreTable::add(ModelScores scores) {
    for (const auto& m : models_) {
        if (m.model_id == scores.model_id) throw ValueError("score table: duplicate model_id '" + scores.model_id + "'");
    }
    std::set<std::string> seen;
    for (const auto& r : scores.rows) {
        if (!seen.insert(r.scan_id).second) {
            throw ValueError("score table: model '" + scores.model_id + "' scores scan '" + r.scan_id + "' twice");
        }
        if (!(r.prob >= 0.0 && r.prob <= 1.0)) {
            throw ValueError("score table: probability outside [0, 1] for scan '" + r.scan_id + "'");
        }
    }
    models_.push_back(std::move(scores));
}

std::vector<ScoreRow> ScoreTable::scans() const {
    if (models_.empty()) return {};
    return models_.front().rows;
}

void ScoreTable::check_complete() const {
    if (models_.empty()) return;
    const auto& ref = models_.front();
    std::unordered_map<std::string, SourceId> sources;
    for (const auto& r : ref.rows) sources.emplace(r.scan_id, r.source);
    for (const auto& m : models_) {
        if (m.rows.size() != ref.rows.size()) {
            throw ValueError("score table: model '" + m.model_id + "' covers " + std::to_string(m.rows.size()) +
                             " scans, expected " + std::to_string(ref.rows.size()));
        }
        for (const auto& r : m.rows) {
            const auto it = sources.find(r.scan_id);
            if (it == sources.end()) {
                throw ValueError("score table: scan '" + r.scan_id + "' missing from model '" + ref.model_id + "'");
            }
            if (it->second != r.source) {
                throw ValueError("score table: models disagree on the source of scan '" + r.scan_id + "'");
            }
        }
    }
}

std::string to_string(FusionRule rule) {
    switch (rule) {
        case FusionRule::uniform: return "uniform";
        case FusionRule::weighted: return "weighted";
        case FusionRule::majority: return "majority";
    }
    return "weighted";
}

FusionRule parse_fusion_rule(const std::string& text) {
    if (text == "uniform") return FusionRule::uniform;
    if (text == "weighted") return FusionRule::weighted;
    if (text == "majority") return FusionRule::majority;
    throw ValueError("unknown fusion rule '" + text + "'");
}

std::vector<ScoreRow> fuse_uniform(const ScoreTable& table) {
    const Aligned a = align(table);
    std::vector<ScoreRow> out = a.scans;
    const auto m = static_cast<double>(table.model_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double total = 0.0;
        for (double p : a.probs[i]) total += p;
        out[i].prob = total / m;
    }
    return out;
}

std::vector<ScoreRow> fuse_weighted(const ScoreTable& table) {
    const Aligned a = align(table);
    std::vector<double> weights;
    double weight_sum = 0.0;
    for (const auto& m : table.models()) {
        if (!m.weight || !(*m.weight > 0.0) || !std::isfinite(*m.weight)) {
            throw ValueError("weighted fusion: model '" + m.model_id + "' needs a positive weight");
        }
        weights.push_back(*m.weight);
        weight_sum += *m.weight;
    }
    for (double& w : weights) w /= weight_sum;
    std::vector<ScoreRow> out = a.scans;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double total = 0.0;
        for (std::size_t m = 0; m < weights.size(); ++m) total += weights[m] * a.probs[i][m];
        out[i].prob = std::clamp(total, 0.0, 1.0);
    }
    return out;
}

std::vector<VoteRow> fuse_majority(const ScoreTable& table, const std::vector<ThresholdMap>& thresholds) {
    const Aligned a = align(table);
    if (thresholds.size() != table.model_count()) {
        throw ValueError("majority vote: need one threshold map per model");
    }
    const std::size_t m = table.model_count();
    std::vector<VoteRow> out;
    for (std::size_t i = 0; i < a.scans.size(); ++i) {
        const auto& scan = a.scans[i];
        VoteRow row{scan.scan_id, scan.source, 0, 0};
        double total = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            row.positive_votes += static_cast<std::size_t>(thresholds[k].predict(scan.source, a.probs[i][k]));
            total += a.probs[i][k];
        }
        if (2 * row.positive_votes > m) row.label = 1;
        else if (2 * row.positive_votes == m) row.label = total / static_cast<double>(m) >= 0.5 ? 1 : 0;
        out.push_back(row);
    }
    return out;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "scan_id,source,prob\n";
    char buffer[64];
    for (const auto& r : rows) {
        std::snprintf(buffer, sizeof(buffer), "%.17g", r.prob);
        out << r.scan_id << ',' << r.source << ',' << buffer << '\n';
    }
}

ModelScores read_scores_csv(const std::filesystem::path& path, const std::string& model_id, int source_count) {
    ModelScores scores;
    scores.model_id = model_id;
    std::set<std::string> seen;
    for (const auto& row : read_csv(path, {"scan_id", "source", "prob"})) {
        ScoreRow r;
        r.scan_id = row[0];
        if (!seen.insert(r.scan_id).second) {
            throw FormatError(path.string() + ": duplicate scan_id '" + r.scan_id + "'");
        }
        const double source = parse_double(row[1], path.string());
        if (source != std::floor(source) || source < 0 || source >= source_count) {
            throw FormatError(path.string() + ": unknown source '" + row[1] + "'");
        }
        r.source = static_cast<SourceId>(source);
        r.prob = parse_double(row[2], path.string());
        if (r.prob < 0.0 || r.prob > 1.0) throw FormatError(path.string() + ": probability outside [0, 1]");
        scores.rows.push_back(std::move(r));
    }
    return scores;
}

std::vector<LabeledScore> attach_labels(const std::vector<ScoreRow>& rows, const Dataset& labels) {
    std::unordered_map<std::string, const ScanBag*> index;
    for (const auto& bag : labels.bags) index.emplace(bag.scan_id, &bag);
    std::vector<LabeledScore> out;
    for (const auto& r : rows) {
        const auto it = index.find(r.scan_id);
        if (it == index.end()) throw ValueError("scan '" + r.scan_id + "' has no label entry");
        const ScanBag& bag = *it->second;
        if (!bag.label) throw ValueError("scan '" + r.scan_id + "' is unlabeled");
        if (bag.source != r.source) throw ValueError("scan '" + r.scan_id + "' source disagrees with labels");
        out.push_back({r.source, *bag.label, r.prob});
    }
    return out;
}

nlohmann::ordered_json EnsembleManifest::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["rule"] = to_string(rule);
    auto& models = j["models"] = nlohmann::ordered_json::array();
    for (const auto& m : members) {
        nlohmann::ordered_json e{{"model_id", m.model_id}, {"scores", m.scores}};
        if (m.weight) e["weight"] = *m.weight;
        models.push_back(e);
    }
    return j;
}

EnsembleManifest EnsembleManifest::from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != 1) throw FormatError("ensemble manifest: schema_version must be 1");
        EnsembleManifest m;
        m.rule = parse_fusion_rule(j.at("rule").get<std::string>());
        for (const auto& e : j.at("models")) {
            EnsembleMember member;
            member.model_id = e.at("model_id").get<std::string>();
            member.scores = e.at("scores").get<std::string>();
            if (e.contains("weight")) member.weight = e.at("weight").get<double>();
            m.members.push_back(std::move(member));
        }
        if (m.members.empty()) throw FormatError("ensemble manifest: no models");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("ensemble manifest: ") + e.what());
    }
}

}  // namespace msmil
