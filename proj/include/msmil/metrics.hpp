#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msmil/data.hpp"

namespace msmil {

/// 2tp / (2tp + fp + fn). A class that is absent and never predicted
/// (all counts zero) scores 1.0.
double f1(std::size_t tp, std::size_t fp, std::size_t fn);

struct Confusion {
    std::size_t tp = 0;  // COVID predicted COVID
    std::size_t fp = 0;  // non-COVID predicted COVID
    std::size_t fn = 0;  // COVID predicted non-COVID
    std::size_t tn = 0;

    double f1_covid() const { return f1(tp, fp, fn); }
    double f1_noncovid() const { return f1(tn, fn, fp); }
    double macro_f1() const { return (f1_covid() + f1_noncovid()) / 2.0; }
    std::size_t total() const { return tp + fp + fn + tn; }
};

struct SourceReport {
    Confusion confusion;
    double f1_covid = 0.0;
    double f1_noncovid = 0.0;
    double macro_f1 = 0.0;
};

/// Per-source F1 breakdown and the challenge score: the mean over every
/// declared source of that source's macro F1.
struct MetricReport {
    std::vector<SourceReport> sources;
    double score = 0.0;

    nlohmann::ordered_json to_json() const;
};

/// One labelled, scored scan.
struct LabeledScore {
    SourceId source = 0;
    int label = 0;
    double prob = 0.0;
};

/// Predictions and truths are aligned by position. Throws ValueError on
/// length mismatch, a non-binary value, or a source outside [0, source_count).
MetricReport challenge_metric(std::span<const int> predictions, std::span<const int> truths,
                              std::span<const SourceId> sources, int source_count);

/// Threshold grid lo, lo + step, ..., hi. 1/step must be an integer so each
/// value is computed as an exact ratio (index / resolution).
class ThresholdGrid {
public:
    ThresholdGrid(double lo = 0.20, double hi = 0.80, double step = 0.005);

    std::size_t size() const { return count_; }
    double operator[](std::size_t i) const;
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    double step() const { return step_; }
    bool contains(double t) const;

private:
    double lo_;
    double hi_;
    double step_;
    long resolution_;
    long first_;
    std::size_t count_;
};

enum class ThresholdMode { global, per_source };

std::string to_string(ThresholdMode mode);
ThresholdMode parse_threshold_mode(const std::string& text);

/// Decision thresholds; the rule is COVID iff p >= t.
struct ThresholdMap {
    ThresholdMode mode = ThresholdMode::global;
    double global = 0.5;
    std::vector<double> per_source;
    ThresholdGrid grid;

    double threshold_for(SourceId source) const;
    int predict(SourceId source, double prob) const { return prob >= threshold_for(source) ? 1 : 0; }
};

struct CalibrationResult {
    ThresholdMap thresholds;
    MetricReport report;  // challenge metric at the chosen thresholds

    nlohmann::ordered_json to_json() const;
};

/// Single threshold maximizing the challenge metric; ties go to the
/// smallest grid value.
CalibrationResult sweep_global(std::span<const LabeledScore> scores, int source_count,
                               const ThresholdGrid& grid = {});

/// Independent threshold per source maximizing that source's macro F1;
/// ties go to the smallest grid value, and a source without scans gets 0.5.
CalibrationResult sweep_per_source(std::span<const LabeledScore> scores, int source_count,
                                   const ThresholdGrid& grid = {});

/// Challenge metric of `scores` under fixed thresholds.
MetricReport evaluate_thresholds(std::span<const LabeledScore> scores, int source_count,
                                 const ThresholdMap& thresholds);

ThresholdMap threshold_map_from_json(const nlohmann::json& j);

}  // namespace msmil
