#include "msmil/metrics.hpp"

#include <cmath>

#include "msmil/error.hpp"

namespace msmil {

namespace {

constexpr double kEmptySourceThreshold = 0.5;

void check_binary(int v, const char* what) {
    if (v != 0 && v != 1) throw ValueError(std::string(what) + " must be 0 or 1");
}

void check_source(SourceId s, int source_count) {
    if (s < 0 || s >= source_count) throw ValueError("source " + std::to_string(s) + " outside declared range");
}

void add(Confusion& c, int truth, int pred) {
    if (truth == 1) (pred == 1 ? c.tp : c.fn)++;
    else (pred == 1 ? c.fp : c.tn)++;
}

MetricReport from_confusions(const std::vector<Confusion>& conf) {
    MetricReport r;
    double total = 0.0;
    for (const auto& c : conf) {
        SourceReport s{c, c.f1_covid(), c.f1_noncovid(), 0.0};
        s.macro_f1 = (s.f1_covid + s.f1_noncovid) / 2.0;
        total += s.macro_f1;
        r.sources.push_back(s);
    }
    r.score = conf.empty() ? 0.0 : total / static_cast<double>(conf.size());
    return r;
}

std::vector<Confusion> confusions_at(std::span<const LabeledScore> scores, int source_count,
                                     const ThresholdMap& map) {
    std::vector<Confusion> conf(static_cast<std::size_t>(source_count));
    for (const auto& s : scores) add(conf[static_cast<std::size_t>(s.source)], s.label, map.predict(s.source, s.prob));
    return conf;
}

void check_scores(std::span<const LabeledScore> scores, int source_count) {
    if (source_count < 1) throw ValueError("source_count must be positive");
    if (scores.empty()) throw ValueError("threshold sweep: no scores");
    for (const auto& s : scores) {
        check_source(s.source, source_count);
        check_binary(s.label, "label");
        if (!std::isfinite(s.prob)) throw ValueError("threshold sweep: non-finite score");
    }
}

}  // namespace

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
    if (tp == 0 && fp == 0 && fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

nlohmann::ordered_json MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["score"] = score;
    auto& arr = j["sources"] = nlohmann::ordered_json::array();
    for (std::size_t s = 0; s < sources.size(); ++s) {
        const auto& r = sources[s];
        arr.push_back({{"source", s},
                       {"f1_covid", r.f1_covid},
                       {"f1_noncovid", r.f1_noncovid},
                       {"macro_f1", r.macro_f1},
                       {"tp", r.confusion.tp},
                       {"fp", r.confusion.fp},
                       {"fn", r.confusion.fn},
                       {"tn", r.confusion.tn}});
    }
    return j;
}

MetricReport challenge_metric(std::span<const int> predictions, std::span<const int> truths,
                              std::span<const SourceId> sources, int source_count) {
    if (source_count < 1) throw ValueError("challenge_metric: source_count must be positive");
    if (predictions.size() != truths.size() || truths.size() != sources.size()) {
        throw ValueError("challenge_metric: predictions, truths and sources differ in length");
    }
    std::vector<Confusion> conf(static_cast<std::size_t>(source_count));
    for (std::size_t i = 0; i < truths.size(); ++i) {
        check_binary(predictions[i], "prediction");
        check_binary(truths[i], "truth");
        check_source(sources[i], source_count);
        add(conf[static_cast<std::size_t>(sources[i])], truths[i], predictions[i]);
    }
    return from_confusions(conf);
}

ThresholdGrid::ThresholdGrid(double lo, double hi, double step) : lo_(lo), hi_(hi), step_(step) {
    if (!(step > 0.0) || !(lo <= hi) || lo < 0.0 || hi > 1.0) throw ValueError("threshold grid: invalid bounds");
    const double inv = 1.0 / step;
    resolution_ = std::lround(inv);
    if (resolution_ < 1 || std::abs(inv - static_cast<double>(resolution_)) > 1e-6 * inv) {
        throw ValueError("threshold grid: 1/step must be an integer");
    }
    const double res = static_cast<double>(resolution_);
    first_ = std::lround(lo * res);
    const long last = std::lround(hi * res);
    if (std::abs(lo * res - static_cast<double>(first_)) > 1e-6 || std::abs(hi * res - static_cast<double>(last)) > 1e-6) {
        throw ValueError("threshold grid: bounds must lie on the step lattice");
    }
    count_ = static_cast<std::size_t>(last - first_ + 1);
}

double ThresholdGrid::operator[](std::size_t i) const {
    return static_cast<double>(first_ + static_cast<long>(i)) / static_cast<double>(resolution_);
}

bool ThresholdGrid::contains(double t) const {
    const double pos = t * static_cast<double>(resolution_) - static_cast<double>(first_);
    const double idx = std::round(pos);
    return std::abs(pos - idx) < 1e-6 && idx >= 0.0 && idx < static_cast<double>(count_);
}

std::string to_string(ThresholdMode mode) { return mode == ThresholdMode::global ? "global" : "per_source"; }

ThresholdMode parse_threshold_mode(const std::string& text) {
    if (text == "global") return ThresholdMode::global;
    if (text == "per_source" || text == "per-source") return ThresholdMode::per_source;
    throw ValueError("unknown threshold mode '" + text + "'");
}

double ThresholdMap::threshold_for(SourceId source) const {
    if (mode == ThresholdMode::global) return global;
    if (source < 0 || static_cast<std::size_t>(source) >= per_source.size()) {
        throw ValueError("no threshold for source " + std::to_string(source));
    }
    return per_source[static_cast<std::size_t>(source)];
}

nlohmann::ordered_json CalibrationResult::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["mode"] = to_string(thresholds.mode);
    j["grid"] = {{"lo", thresholds.grid.lo()}, {"hi", thresholds.grid.hi()}, {"step", thresholds.grid.step()}};
    if (thresholds.mode == ThresholdMode::global) {
        j["global_threshold"] = thresholds.global;
    } else {
        j["thresholds"] = thresholds.per_source;
    }
    nlohmann::ordered_json macro = nlohmann::ordered_json::array();
    for (const auto& s : report.sources) macro.push_back(s.macro_f1);
    j["per_source_macro_f1"] = macro;
    j["score"] = report.score;
    j["report"] = report.to_json();
    return j;
}

ThresholdMap threshold_map_from_json(const nlohmann::json& j) {
    try {
        ThresholdMap map;
        const auto& g = j.at("grid");
        map.grid = ThresholdGrid(g.at("lo").get<double>(), g.at("hi").get<double>(), g.at("step").get<double>());
        map.mode = parse_threshold_mode(j.at("mode").get<std::string>());
        if (map.mode == ThresholdMode::global) map.global = j.at("global_threshold").get<double>();
        else map.per_source = j.at("thresholds").get<std::vector<double>>();
        return map;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("calibration file: ") + e.what());
    }
}

MetricReport evaluate_thresholds(std::span<const LabeledScore> scores, int source_count, const ThresholdMap& thresholds) {
    if (source_count < 1) throw ValueError("source_count must be positive");
    for (const auto& s : scores) {
        check_source(s.source, source_count);
        check_binary(s.label, "label");
    }
    return from_confusions(confusions_at(scores, source_count, thresholds));
}

CalibrationResult sweep_global(std::span<const LabeledScore> scores, int source_count, const ThresholdGrid& grid) {
    check_scores(scores, source_count);
    ThresholdMap map;
    map.mode = ThresholdMode::global;
    map.grid = grid;
    double best = -1.0;
    double best_t = grid[0];
    for (std::size_t i = 0; i < grid.size(); ++i) {
        map.global = grid[i];
        const double score = from_confusions(confusions_at(scores, source_count, map)).score;
        if (score > best) {
            best = score;
            best_t = grid[i];
        }
    }
    map.global = best_t;
    return {map, evaluate_thresholds(scores, source_count, map)};
}

CalibrationResult sweep_per_source(std::span<const LabeledScore> scores, int source_count, const ThresholdGrid& grid) {
    check_scores(scores, source_count);
    ThresholdMap map;
    map.mode = ThresholdMode::per_source;
    map.grid = grid;
    map.per_source.assign(static_cast<std::size_t>(source_count), kEmptySourceThreshold);
    std::vector<std::vector<LabeledScore>> by_source(static_cast<std::size_t>(source_count));
    for (const auto& s : scores) by_source[static_cast<std::size_t>(s.source)].push_back(s);

    for (std::size_t src = 0; src < by_source.size(); ++src) {
        const auto& items = by_source[src];
        if (items.empty()) continue;
        double best = -1.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double t = grid[i];
            Confusion c;
            for (const auto& s : items) add(c, s.label, s.prob >= t ? 1 : 0);
            const double macro = c.macro_f1();
            if (macro > best) {
                best = macro;
                map.per_source[src] = t;
            }
        }
    }
    return {map, evaluate_thresholds(scores, source_count, map)};
}

}  // namespace msmil
