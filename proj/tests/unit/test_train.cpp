#include <doctest.h>

#include <cmath>

#include "msmil/error.hpp"
#include "msmil/metrics.hpp"
#include "msmil/optim.hpp"
#include "msmil/scoring.hpp"
#include "msmil/train.hpp"
#include "test_support.hpp"

using namespace msmil;

namespace {

TrainConfig desk_config() {
    TrainConfig c;
    c.seed = 5;
    c.dims.encoder_hidden = 16;
    c.dims.embed_dim = 8;
    c.dims.attention_dim = 4;
    c.dims.head_hidden = 8;
    c.phase1.epochs = 6;
    c.phase1.lr = 1e-2;
    c.phase1.warmup_epochs = 1;
    c.phase1.batch_size = 16;
    c.phase1.max_slices_per_scan = 8;
    c.phase2.k_train = 8;
    c.phase2.k_eval = 12;
    c.phase2.epochs = 12;
    c.phase2.freeze_epochs = 2;
    c.phase2.lr_backbone = 1e-3;
    c.phase2.lr_head = 1e-2;
    c.phase2.warmup_epochs = 1;
    c.phase2.batch_size = 2;
    c.phase2.accumulation_steps = 2;
    c.phase2.swa_epochs = 2;
    return c;
}

// Lesion slices fill COVID scans so slice labels are exact.
ShiftSpec slice_spec(double separation) {
    ShiftSpec spec = testing::small_spec(separation);
    for (auto& s : spec.sources) {
        s.positive_fraction = 1.0;
        s.train = {20, 20};
        s.val = {10, 10};
    }
    return spec;
}

double max_abs_diff(const MilModel& a, const MilModel& b) {
    const auto pa = parameters(a), pb = parameters(b);
    double worst = 0.0;
    for (std::size_t t = 0; t < pa.size(); ++t) {
        for (std::size_t i = 0; i < pa[t].values.size(); ++i) {
            worst = std::max(worst, std::abs(pa[t].values[i] - pb[t].values[i]));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("16x2 accumulation matches one batch of 32") {
    const auto ds = generate_synthetic(testing::small_spec(), 2, Split::train);
    TrainConfig cfg = desk_config();
    cfg.dims.input_dim = ds.bags[0].dim();
    RngStream init(1, 0);
    const MilModel model = init_mil_model(cfg.dims, 0.5, init);

    std::vector<Matrix> bags;
    std::vector<int> labels;
    std::vector<SampleRef> batch;
    for (std::size_t i = 0; i < 32; ++i) {
        const auto& bag = ds.bags[i % ds.bags.size()];
        bags.push_back(uniform_subsample(bag.slices, 8));
        labels.push_back(*bag.label);
        batch.push_back({i, bag.source, labels.back()});
    }
    RngStream rng(3, 0);
    const auto draws = draw_effective_batch(batch, model, cfg.phase2, rng);
    REQUIRE(draws.size() == 32);

    for (bool frozen : {false, true}) {
        const GradientOptions opt{cfg.phase2_loss(), frozen, 1.0};
        MilModel g_micro = zeros_like(model), g_full = zeros_like(model);
        const double l_micro = accumulate_effective_batch(model, draws, bags, labels, 2, opt, g_micro);
        const double l_full = accumulate_effective_batch(model, draws, bags, labels, 32, opt, g_full);
        CHECK(std::abs(l_micro - l_full) <= 1e-10);
        CHECK(max_abs_diff(g_micro, g_full) <= 1e-10);

        MilModel a = model, b = model;
        AdamW oa({0.9, 0.999, 1e-8, 0.05}), ob({0.9, 0.999, 1e-8, 0.05});
        const GroupRates rates{frozen ? std::nullopt : std::optional<double>(1e-3), 1e-2};
        oa.step(a, g_micro, rates);
        ob.step(b, g_full, rates);
        CHECK(max_abs_diff(a, b) <= 1e-10);
    }
}

TEST_CASE("effective batch draws pair within the batch") {
    const auto ds = generate_synthetic(testing::small_spec(), 2, Split::train);
    TrainConfig cfg = desk_config();
    cfg.dims.input_dim = ds.bags[0].dim();
    RngStream init(1, 0);
    const MilModel model = init_mil_model(cfg.dims, 0.5, init);
    std::vector<SampleRef> batch;
    for (std::size_t i = 0; i < 4; ++i) batch.push_back({i, 0, 0});
    RngStream rng(4, 0);
    const auto draws = draw_effective_batch(batch, model, cfg.phase2, rng);
    for (const auto& d : draws) {
        REQUIRE(d.partner.has_value());
        CHECK(*d.partner < 4);
        CHECK(d.lambda > 0.0);
        CHECK(d.lambda < 1.0);
        CHECK(d.dropout.size() == cfg.dims.head_hidden);
    }
    cfg.phase2.mixup = false;
    for (const auto& d : draw_effective_batch(batch, model, cfg.phase2, rng)) {
        CHECK(!d.partner.has_value());
        CHECK(d.lambda == 1.0);
    }
}

TEST_CASE("phase 1 separates clean slices and replays exactly") {
    const auto spec = slice_spec(4.0);
    const auto train = generate_synthetic(spec, 7, Split::train);
    const auto val = generate_synthetic(spec, 7, Split::val);
    const TrainConfig cfg = desk_config();
    const auto a = train_phase1(train, cfg);
    CHECK(slice_accuracy(a.model, val, 64) >= 0.95);
    const auto b = train_phase1(train, cfg);
    CHECK(a.history.back().train_loss == b.history.back().train_loss);
}

TEST_CASE("phase 1 on zero-signal data stays at chance") {
    const auto spec = slice_spec(0.0);
    const auto train = generate_synthetic(spec, 8, Split::train);
    const auto val = generate_synthetic(spec, 8, Split::val);
    const auto r = train_phase1(train, desk_config());
    const double acc = slice_accuracy(r.model, val, 64);
    CHECK(acc >= 0.4);
    CHECK(acc <= 0.6);
}

TEST_CASE("phase 2 reaches high validation F1 on separable scans") {
    ShiftSpec spec = testing::small_spec(4.0);
    for (auto& s : spec.sources) {
        s.train = {16, 16};
        s.val = {8, 8};
    }
    const auto train = generate_synthetic(spec, 11, Split::train);
    const auto val = generate_synthetic(spec, 11, Split::val);
    const TrainConfig cfg = desk_config();
    const auto p1 = train_phase1(train, cfg);
    const auto r = train_phase2(train, &val, p1.model.encoder, cfg);
    CHECK(r.best_val_metric >= 0.95);
    CHECK(validation_metric(r.best, val, cfg.phase2.k_eval) == doctest::Approx(r.best_val_metric).epsilon(1e-15));
    REQUIRE(r.swa.has_value());
    CHECK(all_finite(*r.swa));

    const auto again = train_phase2(train, &val, p1.model.encoder, cfg);
    CHECK(max_abs_diff(again.best, r.best) == 0.0);
}

TEST_CASE("early stopping halts on a flat validation metric") {
    const auto train = generate_synthetic(testing::small_spec(), 3, Split::train);
    const auto val = generate_synthetic(testing::small_spec(), 3, Split::val);
    TrainConfig cfg = desk_config();
    cfg.phase2.lr_head = 1e-14;
    cfg.phase2.lr_backbone = 1e-14;
    cfg.phase2.patience = 3;
    cfg.phase2.epochs = 20;
    cfg.phase2.swa_epochs = 0;
    RngStream rng(1, 0);
    const Encoder enc = init_encoder(6, 16, 8, rng);
    std::size_t calls = 0;
    const auto r = train_phase2(train, &val, enc, cfg, [&](const EpochRecord& rec) {
        ++calls;
        CHECK(rec.encoder_frozen == (rec.epoch < cfg.phase2.freeze_epochs));
    });
    CHECK(r.stopped_early);
    CHECK(r.best_epoch == 0);
    CHECK(calls == 4);
    CHECK(r.history.size() == 4);
    CHECK(!r.swa.has_value());
}

TEST_CASE("frozen epochs leave the encoder untouched") {
    const auto train = generate_synthetic(testing::small_spec(), 3, Split::train);
    TrainConfig cfg = desk_config();
    cfg.phase2.epochs = 3;
    cfg.phase2.freeze_epochs = 3;
    cfg.phase2.swa_epochs = 0;
    RngStream rng(1, 0);
    const Encoder enc = init_encoder(6, 16, 8, rng);
    const auto r = train_phase2(train, nullptr, enc, cfg);
    CHECK(r.best.encoder.hidden.weight == enc.hidden.weight);
    CHECK(r.best.encoder.output.bias == enc.output.bias);
    CHECK(r.best.head_output.weight != init_mil_model(enc, r.best.dims(), 0.5, rng).head_output.weight);
}

TEST_CASE("train config JSON is strict and round-trips") {
    const TrainConfig c = desk_config();
    const auto j = nlohmann::json::parse(to_json(c).dump());
    const TrainConfig back = train_config_from_json(j);
    CHECK(to_json(back) == to_json(c));

    auto bad = j;
    bad["phase2"]["lr_haed"] = 1.0;
    CHECK_THROWS_AS(train_config_from_json(bad), FormatError);
    bad = j;
    bad["schema_version"] = 3;
    CHECK_THROWS_AS(train_config_from_json(bad), FormatError);
    bad = j;
    bad["phase2"]["focal_alpha"] = {0.7, 0.7};
    CHECK_THROWS_AS(train_config_from_json(bad), ValueError);
    bad = j;
    bad["phase2"]["sampler"] = "random";
    CHECK_THROWS_AS(train_config_from_json(bad), FormatError);
    bad = j;
    bad["phase1"]["epochs"] = "six";
    CHECK_THROWS_AS(train_config_from_json(bad), FormatError);
}

TEST_CASE("focal alpha is listed COVID first") {
    TrainConfig c;
    const auto loss = c.phase2_loss();
    CHECK(loss.alpha[kCovid] == 0.55);
    CHECK(loss.alpha[kNonCovid] == 0.45);
}
