#include "msmil/data.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "msmil/error.hpp"
#include "msmil/rng.hpp"

namespace msmil {

namespace {

// Stream ids used by the generator; bag streams are offset past these.
constexpr std::uint64_t kDirectionStream = 1;
constexpr std::uint64_t kLabelStream = 1ULL << 60;
constexpr std::uint64_t kBagStreamBase = 1000;

std::uint64_t split_code(Split split) {
    switch (split) {
        case Split::train: return 0;
        case Split::val: return 1;
        case Split::test: return 2;
    }
    return 0;
}

std::string make_scan_id(Split split, std::size_t source, std::size_t index) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%s_s%zu_%04zu", to_string(split).c_str(), source, index);
    return buffer;
}

}  // namespace

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::train;
    if (text == "val" || text == "validation") return Split::val;
    if (text == "test") return Split::test;
    throw ValueError("unknown split '" + text + "'");
}

std::vector<std::array<std::size_t, 2>> Dataset::class_counts() const {
    std::vector<std::array<std::size_t, 2>> counts(static_cast<std::size_t>(source_count), {0, 0});
    for (const auto& bag : bags) {
        if (bag.label && bag.source >= 0 && bag.source < source_count) {
            ++counts[static_cast<std::size_t>(bag.source)][static_cast<std::size_t>(*bag.label)];
        }
    }
    return counts;
}

const ScanBag& Dataset::find(const std::string& scan_id) const {
    for (const auto& bag : bags) {
        if (bag.scan_id == scan_id) return bag;
    }
    throw ValueError("unknown scan_id '" + scan_id + "'");
}

void Dataset::validate(bool require_slices) const {
    if (source_count < 1) throw FormatError("dataset: source count must be positive");
    std::set<std::string> seen;
    std::size_t dim = 0;
    for (const auto& bag : bags) {
        if (bag.scan_id.empty()) throw FormatError("dataset: empty scan_id");
        if (!seen.insert(bag.scan_id).second) {
            throw FormatError("dataset: duplicate scan_id '" + bag.scan_id + "'");
        }
        if (bag.source < 0 || bag.source >= source_count) {
            throw FormatError("dataset: scan '" + bag.scan_id + "' has unknown source " +
                              std::to_string(bag.source));
        }
        if (bag.label && *bag.label != 0 && *bag.label != 1) {
            throw FormatError("dataset: scan '" + bag.scan_id + "' has non-binary label");
        }
        if (!bag.label && split != Split::test) {
            throw FormatError("dataset: scan '" + bag.scan_id + "' is unlabeled outside the test split");
        }
        if (require_slices) {
            if (bag.slice_count() == 0) throw FormatError("dataset: scan '" + bag.scan_id + "' has no slices");
            if (dim == 0) dim = bag.dim();
            if (bag.dim() != dim) {
                throw FormatError("dataset: scan '" + bag.scan_id + "' has embedding dim " +
                                  std::to_string(bag.dim()) + ", expected " + std::to_string(dim));
            }
        }
    }
}

void ShiftSpec::validate() const {
    if (d_in == 0) throw ValueError("shift spec: d_in must be positive");
    if (slices_min == 0 || slices_min > slices_max) {
        throw ValueError("shift spec: need 1 <= slices_min <= slices_max");
    }
    if (!(noise_std >= 0.0) || !std::isfinite(lesion_separation)) {
        throw ValueError("shift spec: invalid noise_std or lesion_separation");
    }
    if (sources.empty()) throw ValueError("shift spec: no sources");
    std::size_t total = 0;
    for (std::size_t s = 0; s < sources.size(); ++s) {
        const auto& src = sources[s];
        const std::string where = "shift spec: source " + std::to_string(s);
        if (!(src.scale > 0.0)) throw ValueError(where + " scale must be positive");
        if (!(src.positive_fraction > 0.0 && src.positive_fraction <= 1.0)) {
            throw ValueError(where + " positive_fraction must be in (0, 1]");
        }
        if (!src.offset.empty() && src.offset.size() != d_in && src.offset.size() != 1) {
            throw ValueError(where + " offset must have 1 or d_in entries");
        }
        if (!std::isfinite(src.score_bias)) throw ValueError(where + " score_bias must be finite");
        total += src.train.covid + src.train.noncovid + src.val.covid + src.val.noncovid +
                 src.test.covid + src.test.noncovid;
    }
    if (total == 0) throw ValueError("shift spec: zero scans in every split");
}

const SplitCounts& ShiftSpec::counts(std::size_t source, Split split) const {
    const auto& src = sources.at(source);
    switch (split) {
        case Split::train: return src.train;
        case Split::val: return src.val;
        case Split::test: return src.test;
    }
    return src.train;
}

Vector lesion_direction(const ShiftSpec& spec, std::uint64_t seed) {
    RngStream rng(seed, kDirectionStream);
    Vector dir(spec.d_in);
    double norm = 0.0;
    while (norm == 0.0) {
        for (double& v : dir) v = rng.normal();
        norm = std::sqrt(dot(dir, dir));
    }
    for (double& v : dir) v /= norm;
    return dir;
}

Dataset generate_synthetic(const ShiftSpec& spec, std::uint64_t seed, Split split) {
    spec.validate();
    Dataset out;
    out.split = split;
    out.source_count = static_cast<int>(spec.sources.size());

    Vector lesion_mean = lesion_direction(spec, seed);
    for (double& v : lesion_mean) v *= spec.lesion_separation;

    const bool shifted_split = split != Split::train;
    const std::size_t slice_span = spec.slices_max - spec.slices_min + 1;

    for (std::size_t s = 0; s < spec.sources.size(); ++s) {
        const auto& src = spec.sources[s];
        const auto& counts = spec.counts(s, split);
        std::vector<int> labels(counts.covid, kCovid);
        labels.insert(labels.end(), counts.noncovid, kNonCovid);
        RngStream label_rng(seed, kLabelStream + split_code(split) * 1024 + s);
        label_rng.shuffle(labels);

        Vector offset(spec.d_in, 0.0);
        if (src.offset.size() == 1) offset.assign(spec.d_in, src.offset[0]);
        else if (!src.offset.empty()) offset = src.offset;

        for (std::size_t i = 0; i < labels.size(); ++i) {
            const std::uint64_t stream =
                kBagStreamBase + (split_code(split) << 40) + (static_cast<std::uint64_t>(s) << 28) + i;
            RngStream rng(seed, stream);

            const std::size_t n = spec.slices_min + static_cast<std::size_t>(rng.uniform_int(slice_span));
            std::size_t lesion_begin = 0;
            std::size_t lesion_end = 0;
            if (labels[i] == kCovid) {
                const auto lesions = static_cast<std::size_t>(
                    std::ceil(src.positive_fraction * static_cast<double>(n) - 1e-9));
                const std::size_t count = std::min(std::max<std::size_t>(lesions, 1), n);
                lesion_begin = static_cast<std::size_t>(rng.uniform_int(n - count + 1));
                lesion_end = lesion_begin + count;
            }

            ScanBag bag;
            bag.scan_id = make_scan_id(split, s, i);
            bag.source = static_cast<SourceId>(s);
            if (split != Split::test) bag.label = labels[i];
            bag.slices = Matrix(n, spec.d_in);
            for (std::size_t r = 0; r < n; ++r) {
                auto row = bag.slices.row(r);
                const bool lesion = r >= lesion_begin && r < lesion_end;
                for (std::size_t c = 0; c < spec.d_in; ++c) {
                    double x = spec.noise_std * rng.normal();
                    if (lesion) x += lesion_mean[c];
                    if (shifted_split) x += src.score_bias * lesion_mean[c];
                    row[c] = src.scale * x + offset[c];
                }
            }
            out.bags.push_back(std::move(bag));
        }
    }
    return out;
}

std::vector<std::size_t> uniform_subsample_indices(std::size_t n, std::size_t k) {
    if (k == 0) throw ValueError("uniform_subsample: K must be at least 1");
    std::vector<std::size_t> idx;
    if (n <= k) {
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        return idx;
    }
    idx.reserve(k);
    for (std::size_t j = 0; j < k; ++j) idx.push_back(j * n / k);
    return idx;
}

Matrix uniform_subsample(const Matrix& slices, std::size_t k) {
    const auto idx = uniform_subsample_indices(slices.rows(), k);
    if (idx.size() == slices.rows()) return slices;
    Matrix out(idx.size(), slices.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto src = slices.row(idx[j]);
        std::copy(src.begin(), src.end(), out.row(j).begin());
    }
    return out;
}

ScanBag uniform_subsample(const ScanBag& bag, std::size_t k) {
    ScanBag out;
    out.scan_id = bag.scan_id;
    out.source = bag.source;
    out.label = bag.label;
    out.slices = uniform_subsample(bag.slices, k);
    return out;
}

}  // namespace msmil
