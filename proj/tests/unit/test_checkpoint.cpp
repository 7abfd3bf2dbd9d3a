#include <doctest.h>

#include "msmil/checkpoint.hpp"
#include "msmil/error.hpp"
#include "test_support.hpp"

using namespace msmil;

namespace {

ModelDims dims() {
    ModelDims d;
    d.input_dim = 4;
    d.encoder_hidden = 5;
    d.embed_dim = 3;
    d.attention_dim = 2;
    d.head_hidden = 4;
    return d;
}

}  // namespace

TEST_CASE("MIL checkpoint round trip is bit exact") {
    testing::TempDir tmp;
    RngStream rng(3, 0);
    const MilModel m = init_mil_model(dims(), 0.4, rng);
    const auto path = tmp.path / "model.json";
    save_checkpoint(path, m, {"phase2", 3, {{"note", "x"}}});
    CHECK(checkpoint_kind(path) == ModelKind::mil);
    const MilModel back = load_mil_checkpoint(path);
    CHECK(back.dims() == m.dims());
    CHECK(back.head_dropout == 0.4);
    const auto a = parameters(m), b = parameters(back);
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        CHECK(a[t].name == b[t].name);
        CHECK(std::equal(a[t].values.begin(), a[t].values.end(), b[t].values.begin()));
    }
    const auto manifest = read_checkpoint_manifest(path);
    CHECK(manifest["format"] == "msmil-checkpoint");
    CHECK(manifest["seed"] == 3);
    CHECK(manifest["config"]["note"] == "x");
    CHECK_THROWS_AS(load_slice_checkpoint(path), FormatError);
}

TEST_CASE("slice checkpoint round trip") {
    testing::TempDir tmp;
    RngStream rng(4, 0);
    const SliceModel m = init_slice_model(dims(), 0.3, rng);
    const auto path = tmp.path / "slice.json";
    save_checkpoint(path, m, {"phase1", 4, {}});
    CHECK(checkpoint_kind(path) == ModelKind::slice);
    const SliceModel back = load_slice_checkpoint(path);
    CHECK(back.encoder.hidden.weight == m.encoder.hidden.weight);
    CHECK(back.classifier.bias == m.classifier.bias);
    CHECK_THROWS_AS(load_mil_checkpoint(path), FormatError);
}

TEST_CASE("tampered checkpoints are rejected") {
    testing::TempDir tmp;
    RngStream rng(5, 0);
    const MilModel m = init_mil_model(dims(), 0.5, rng);
    const auto path = tmp.path / "model.json";
    const auto blob = tmp.path / "model.bin";
    save_checkpoint(path, m, {"phase2", 5, {}});
    const std::string manifest = testing::read_file(path);
    const std::string bytes = testing::read_file(blob);

    std::string flipped = bytes;
    flipped[flipped.size() - 1] ^= 0x01;
    testing::write_file(blob, flipped);
    CHECK_THROWS_AS(load_mil_checkpoint(path), FormatError);

    testing::write_file(blob, bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(load_mil_checkpoint(path), FormatError);

    testing::write_file(blob, bytes);
    auto j = nlohmann::json::parse(manifest);
    j["version"] = 2;
    testing::write_file(path, j.dump());
    CHECK_THROWS_AS(load_mil_checkpoint(path), FormatError);

    j = nlohmann::json::parse(manifest);
    j["tensors"][0]["shape"] = {1, 1};
    testing::write_file(path, j.dump());
    CHECK_THROWS_AS(load_mil_checkpoint(path), FormatError);

    testing::write_file(path, "{not json");
    CHECK_THROWS_AS(load_mil_checkpoint(path), FormatError);
    CHECK_THROWS_AS(load_mil_checkpoint(tmp.path / "absent.json"), FormatError);
}
