#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "msmil/data.hpp"
#include "msmil/data_io.hpp"
#include "msmil/error.hpp"
#include "test_support.hpp"

using namespace msmil;

namespace {

// Per-source counts of the reference challenge split.
ShiftSpec table_one_spec() {
    ShiftSpec spec;
    spec.d_in = 4;
    spec.slices_min = 3;
    spec.slices_max = 6;
    const std::size_t train_covid[] = {175, 175, 39, 175};
    const std::size_t val_covid[] = {43, 43, 0, 42};
    for (int s = 0; s < 4; ++s) {
        SourceShift src;
        src.train = {train_covid[s], 165};
        src.val = {val_covid[s], 45};
        spec.sources.push_back(src);
    }
    return spec;
}

}  // namespace

TEST_CASE("generator reproduces the per-source class skeleton") {
    const auto spec = table_one_spec();
    const auto train = generate_synthetic(spec, 1, Split::train);
    const auto val = generate_synthetic(spec, 1, Split::val);
    std::size_t covid = 0, noncovid = 0;
    for (const auto& c : train.class_counts()) {
        covid += c[1];
        noncovid += c[0];
    }
    CHECK(covid == 564);
    CHECK(noncovid == 660);
    CHECK(train.bags.size() == 1224);
    covid = noncovid = 0;
    for (const auto& c : val.class_counts()) {
        covid += c[1];
        noncovid += c[0];
    }
    CHECK(covid == 128);
    CHECK(noncovid == 180);
    CHECK(val.class_counts()[2][1] == 0);
    CHECK(train.class_counts()[2][1] == 39);
    train.validate();
    val.validate();
}

TEST_CASE("generator is a pure function of spec and seed") {
    auto spec = testing::small_spec();
    const auto a = generate_synthetic(spec, 9, Split::train);
    const auto b = generate_synthetic(spec, 9, Split::train);
    const auto c = generate_synthetic(spec, 10, Split::train);
    REQUIRE(a.bags.size() == b.bags.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.bags.size(); ++i) {
        CHECK(a.bags[i].scan_id == b.bags[i].scan_id);
        CHECK(a.bags[i].label == b.bags[i].label);
        CHECK(a.bags[i].slices == b.bags[i].slices);
        any_diff |= !(a.bags[i].slices == c.bags[i].slices);
    }
    CHECK(any_diff);
}

TEST_CASE("COVID bags carry ceil(rho * N) lesion slices") {
    ShiftSpec spec;
    spec.d_in = 3;
    spec.slices_min = 5;
    spec.slices_max = 17;
    spec.noise_std = 0.0;
    spec.lesion_separation = 2.0;
    SourceShift src;
    src.positive_fraction = 0.3;
    src.train = {20, 20};
    spec.sources = {src};
    const auto ds = generate_synthetic(spec, 3, Split::train);
    for (const auto& bag : ds.bags) {
        std::size_t lesions = 0;
        std::size_t first = bag.slice_count(), last = 0;
        for (std::size_t r = 0; r < bag.slice_count(); ++r) {
            if (dot(bag.slices.row(r), bag.slices.row(r)) > 0.0) {
                ++lesions;
                first = std::min(first, r);
                last = r;
            }
        }
        if (*bag.label == kCovid) {
            CHECK(lesions == static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(bag.slice_count()) - 1e-9)));
            CHECK(last - first + 1 == lesions);
        } else {
            CHECK(lesions == 0);
        }
    }
}

TEST_CASE("source offsets move the mean embedding") {
    ShiftSpec spec;
    spec.d_in = 8;
    spec.slices_min = 10;
    spec.slices_max = 20;
    SourceShift a, b;
    a.train = b.train = {10, 10};
    b.offset = {3.0};
    spec.sources = {a, b};
    const auto ds = generate_synthetic(spec, 4, Split::train);
    // Recompute per-source mean slice norms directly from the emitted data.
    double norm[2] = {0, 0};
    double count[2] = {0, 0};
    for (const auto& bag : ds.bags) {
        for (std::size_t r = 0; r < bag.slice_count(); ++r) {
            norm[bag.source] += std::sqrt(dot(bag.slices.row(r), bag.slices.row(r)));
            count[bag.source] += 1;
        }
    }
    const double mean0 = norm[0] / count[0], mean1 = norm[1] / count[1];
    CHECK(mean1 > mean0 + 3.0);
}

TEST_CASE("score bias only touches held-out splits") {
    ShiftSpec spec;
    spec.d_in = 2;
    spec.slices_min = spec.slices_max = 4;
    spec.noise_std = 0.0;
    spec.lesion_separation = 1.0;
    SourceShift src;
    src.score_bias = 0.5;
    src.train = {0, 3};
    src.val = {0, 3};
    spec.sources = {src};
    const auto dir = lesion_direction(spec, 8);
    const auto train = generate_synthetic(spec, 8, Split::train);
    const auto val = generate_synthetic(spec, 8, Split::val);
    CHECK(train.bags[0].slices(0, 0) == 0.0);
    CHECK(val.bags[0].slices(0, 0) == doctest::Approx(0.5 * dir[0]));
    CHECK(val.bags[0].slices(2, 1) == doctest::Approx(0.5 * dir[1]));
}

TEST_CASE("invalid specs are rejected") {
    ShiftSpec spec = testing::small_spec();
    spec.sources[0].scale = 0.0;
    CHECK_THROWS_AS(spec.validate(), ValueError);
    spec = testing::small_spec();
    spec.sources[0].positive_fraction = 0.0;
    CHECK_THROWS_AS(spec.validate(), ValueError);
    spec = testing::small_spec();
    for (auto& s : spec.sources) s.train = s.val = s.test = {};
    CHECK_THROWS_AS(generate_synthetic(spec, 1, Split::train), ValueError);
}

TEST_CASE("uniform subsample index formula") {
    CHECK(uniform_subsample_indices(4, 8) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(uniform_subsample_indices(8, 4) == std::vector<std::size_t>{0, 2, 4, 6});
    CHECK(uniform_subsample_indices(7, 7) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(uniform_subsample_indices(5, 0), ValueError);

    Matrix m(8, 2);
    for (std::size_t r = 0; r < 8; ++r) m(r, 0) = static_cast<double>(r);
    const Matrix sub = uniform_subsample(m, 4);
    CHECK(sub.rows() == 4);
    CHECK(sub(3, 0) == 6.0);
}

TEST_CASE("uniform subsample covers both ends without duplicates") {
    for (std::size_t n = 1; n <= 120; ++n) {
        for (std::size_t k = 1; k <= 60; ++k) {
            const auto idx = uniform_subsample_indices(n, k);
            REQUIRE(idx.size() == std::min(n, k));
            CHECK(idx.front() == 0);
            for (std::size_t j = 1; j < idx.size(); ++j) REQUIRE(idx[j] > idx[j - 1]);
            const std::size_t block = (n + k - 1) / k;
            CHECK(idx.back() >= n - block);
            CHECK(idx.back() < n);
        }
    }
}

TEST_CASE("metadata CSV parsing") {
    testing::TempDir tmp;
    const auto path = tmp.path / "meta.csv";
    testing::write_file(path, "scan_id,label,source\nct_a,1,0\nct_b,0,3\n");
    const auto ds = load_metadata_csv(path, Split::train, 4);
    REQUIRE(ds.bags.size() == 2);
    CHECK(ds.bags[0].scan_id == "ct_a");
    CHECK(ds.bags[0].label == 1);
    CHECK(ds.bags[1].source == 3);

    testing::write_file(path, "scan_id,label,source\nct_a,1,0\nct_a,0,1\n");
    try {
        load_metadata_csv(path, Split::train, 4);
        FAIL("duplicate accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("ct_a") != std::string::npos);
    }

    testing::write_file(path, "scan_id,source\nct_a,0\n");
    CHECK_THROWS_AS(load_metadata_csv(path, Split::train, 4), FormatError);
    testing::write_file(path, "scan_id,label,source\nct_a,1,4\n");
    CHECK_THROWS_AS(load_metadata_csv(path, Split::train, 4), FormatError);
    testing::write_file(path, "scan_id,label,source\nct_a,,1\n");
    CHECK_THROWS_AS(load_metadata_csv(path, Split::val, 4), FormatError);
    CHECK(!load_metadata_csv(path, Split::test, 4).bags[0].label.has_value());
    CHECK_THROWS_AS(load_metadata_csv(tmp.path / "missing.csv", Split::train, 4), FormatError);
}

TEST_CASE("dataset write/read round trip") {
    testing::TempDir tmp;
    const auto spec = testing::small_spec();
    const auto ds = generate_synthetic(spec, 12, Split::val);
    write_dataset(tmp.path, ds);
    const auto back = load_bags(tmp.path / "val", Split::val, ds.source_count);
    REQUIRE(back.bags.size() == ds.bags.size());
    for (const auto& bag : ds.bags) {
        const auto& other = back.find(bag.scan_id);
        CHECK(other.source == bag.source);
        CHECK(other.label == bag.label);
        CHECK(other.slices == bag.slices);
    }
    // Metadata: read, write again, byte-compare.
    const auto meta_path = tmp.path / "val_metadata.csv";
    const auto meta = load_metadata_csv(meta_path, Split::val, ds.source_count);
    write_metadata_csv(tmp.path / "again.csv", meta);
    CHECK(testing::read_file(meta_path) == testing::read_file(tmp.path / "again.csv"));
}

TEST_CASE("bag binary layout is little-endian with a fixed header") {
    testing::TempDir tmp;
    ScanBag bag;
    bag.scan_id = "b1";
    bag.label = 1;
    bag.slices = Matrix(1, 2, Vector{1.0, -2.0});
    write_bag(tmp.path, bag);
    const std::string bytes = testing::read_file(tmp.path / "b1.bin");
    REQUIRE(bytes.size() == 8 + 4 + 8 + 8 + 16);
    CHECK(bytes.substr(0, 8) == "MSMILBAG");
    CHECK(static_cast<unsigned char>(bytes[8]) == 1);
    CHECK(static_cast<unsigned char>(bytes[12]) == 1);  // rows
    CHECK(static_cast<unsigned char>(bytes[20]) == 2);  // cols
    // 1.0 = 0x3FF0000000000000, last byte first.
    CHECK(static_cast<unsigned char>(bytes[28 + 7]) == 0x3F);
    CHECK(static_cast<unsigned char>(bytes[28 + 6]) == 0xF0);

    testing::write_file(tmp.path / "b1.bin", bytes.substr(0, 30));
    CHECK_THROWS_AS(read_bag(tmp.path, "b1"), FormatError);
}

TEST_CASE("predictions CSV round trip") {
    testing::TempDir tmp;
    const std::vector<std::pair<std::string, int>> preds{{"x", 1}, {"y", 0}};
    write_predictions_csv(tmp.path / "p.csv", preds);
    CHECK(read_predictions_csv(tmp.path / "p.csv") == preds);
    testing::write_file(tmp.path / "p.csv", "scan_id,label\nx,2\n");
    CHECK_THROWS_AS(read_predictions_csv(tmp.path / "p.csv"), FormatError);
}

TEST_CASE("shift spec JSON is strict") {
    auto j = nlohmann::json::parse(R"({"schema_version": 1, "d_in": 4, "sources": [
        {"offset": 2.0, "train": {"covid": 1, "noncovid": 2}}]})");
    const auto spec = shift_spec_from_json(j);
    CHECK(spec.d_in == 4);
    CHECK(spec.sources[0].offset == Vector{2.0});
    CHECK(spec.sources[0].train.noncovid == 2);
    const auto again = shift_spec_from_json(nlohmann::json::parse(to_json(spec).dump()));
    CHECK(to_json(again) == to_json(spec));

    j["sources"][0]["scael"] = 1.0;
    CHECK_THROWS_AS(shift_spec_from_json(j), FormatError);
    j = nlohmann::json::parse(R"({"schema_version": 2, "sources": []})");
    CHECK_THROWS_AS(shift_spec_from_json(j), FormatError);
}
