#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "msmil/error.hpp"
#include "msmil/mil.hpp"
#include "msmil/model.hpp"
#include "oracles.hpp"

using namespace msmil;

namespace {

ModelDims tiny_dims() {
    ModelDims d;
    d.input_dim = 5;
    d.encoder_hidden = 6;
    d.embed_dim = 4;
    d.attention_dim = 3;
    d.head_hidden = 5;
    return d;
}

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal() * scale;
    return m;
}

// Perturb biases away from zero so ReLU kinks are unlikely near the point.
MilModel random_model(std::uint64_t seed) {
    RngStream rng(seed, 0);
    MilModel m = init_mil_model(tiny_dims(), 0.5, rng);
    for (auto& p : parameters(m)) {
        for (double& v : p.values) v += 0.3 * rng.normal();
    }
    return m;
}

struct FdResult {
    double max_rel = 0.0;
    double max_abs = 0.0;
};

// Relative error |a - f| / max(|a|, |f|, 1e-3): tiny gradients compare absolutely.
FdResult compare(const MilModel& model, const MilSample& sample, const GradientOptions& opt) {
    const MilModel grads = backward(model, sample, opt);
    MilModel probe = model;
    auto params = parameters(probe);
    const auto analytic = parameters(grads);
    FdResult r;
    const double h = 1e-5;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].values.size(); ++i) {
            if (opt.freeze_encoder && params[t].group == ParamGroup::backbone) continue;
            double& w = params[t].values[i];
            const double orig = w;
            w = orig + h;
            const double up = sample_loss(probe, sample, opt.loss);
            w = orig - h;
            const double down = sample_loss(probe, sample, opt.loss);
            w = orig;
            const double fd = opt.scale * (up - down) / (2 * h);
            const double a = analytic[t].values[i];
            const double diff = std::abs(a - fd);
            r.max_abs = std::max(r.max_abs, diff);
            r.max_rel = std::max(r.max_rel, diff / std::max({std::abs(a), std::abs(fd), 1e-3}));
        }
    }
    return r;
}

}  // namespace

TEST_CASE("single slice gets all attention") {
    RngStream rng(1, 0);
    const MilModel m = random_model(3);
    const Matrix h = random_matrix(1, 4, rng);
    const auto p = attention_pool(m.attention, h);
    CHECK(p.attention == Vector{1.0});
    for (std::size_t c = 0; c < 4; ++c) CHECK(p.z[c] == doctest::Approx(h(0, c)).epsilon(1e-15));
}

TEST_CASE("identical slices share attention evenly") {
    const MilModel m = random_model(4);
    Matrix h(5, 4);
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 4; ++c) h(r, c) = 0.1 * static_cast<double>(c) - 0.2;
    }
    const auto p = attention_pool(m.attention, h);
    for (double a : p.attention) CHECK(a == doctest::Approx(0.2).epsilon(1e-14));
    for (std::size_t c = 0; c < 4; ++c) CHECK(p.z[c] == doctest::Approx(h(0, c)).epsilon(1e-14));
}

TEST_CASE("attention pooling matches the straight-line oracle") {
    RngStream rng(17, 0);
    const MilModel m = random_model(5);
    const Matrix h = random_matrix(3, 4, rng);
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < 3; ++r) rows.emplace_back(h.row(r).begin(), h.row(r).end());
    const auto expect = oracle::pool(m.attention, rows);
    const auto got = attention_pool(m.attention, h);
    for (std::size_t k = 0; k < 3; ++k) CHECK(got.attention[k] == doctest::Approx(expect.a[k]).epsilon(1e-13));
    for (std::size_t c = 0; c < 4; ++c) CHECK(got.z[c] == doctest::Approx(expect.z[c]).epsilon(1e-13));
}

TEST_CASE("pooling is permutation invariant") {
    RngStream rng(9, 0);
    const MilModel m = random_model(6);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix h = random_matrix(7, 4, rng);
        std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5, 6};
        rng.shuffle(perm);
        Matrix hp(7, 4);
        for (std::size_t r = 0; r < 7; ++r) {
            for (std::size_t c = 0; c < 4; ++c) hp(r, c) = h(perm[r], c);
        }
        const auto a = attention_pool(m.attention, h);
        const auto b = attention_pool(m.attention, hp);
        for (std::size_t c = 0; c < 4; ++c) CHECK(a.z[c] == doctest::Approx(b.z[c]).epsilon(1e-13));
        for (std::size_t r = 0; r < 7; ++r) CHECK(b.attention[r] == doctest::Approx(a.attention[perm[r]]).epsilon(1e-13));
    }
}

TEST_CASE("attention weights stay finite for large scores") {
    MilModel m = random_model(7);
    for (double& v : m.attention.w) v *= 1e4;
    RngStream rng(2, 0);
    const auto p = attention_pool(m.attention, random_matrix(6, 4, rng, 10.0));
    double total = 0.0;
    for (double a : p.attention) {
        CHECK(std::isfinite(a));
        total += a;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero model predicts one half") {
    MilModel m = random_model(8);
    set_zero(m);
    RngStream rng(3, 0);
    const auto out = forward(m, random_matrix(4, 5, rng), Mode::eval);
    CHECK(out.logits == Vector{0.0, 0.0});
    CHECK(softmax(out.logits) == Vector{0.5, 0.5});
}

TEST_CASE("eval forward is deterministic and matches the oracle") {
    const MilModel m = random_model(10);
    RngStream rng(4, 0);
    const Matrix x = random_matrix(9, 5, rng);
    const auto a = forward(m, x, Mode::eval);
    const auto b = forward(m, x, Mode::eval);
    CHECK(a.logits == b.logits);
    const auto expect = oracle::mil_logits(m, x);
    CHECK(a.logits[0] == doctest::Approx(expect[0]).epsilon(1e-13));
    CHECK(a.logits[1] == doctest::Approx(expect[1]).epsilon(1e-13));
}

TEST_CASE("train mode needs a generator and applies dropout") {
    const MilModel m = random_model(11);
    RngStream rng(5, 0);
    const Matrix x = random_matrix(4, 5, rng);
    CHECK_THROWS_AS(forward(m, x, Mode::train), ValueError);
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs |= forward(m, x, Mode::train, &rng).logits != forward(m, x, Mode::eval).logits;
    CHECK(differs);

    const auto mask = dropout_mask(10000, 0.5, rng);
    std::size_t zeros = 0;
    for (double v : mask) {
        CHECK((v == 0.0 || v == 2.0));
        zeros += v == 0.0;
    }
    CHECK(zeros > 4700);
    CHECK(zeros < 5300);
}

TEST_CASE("classifier bias gradient at zero parameters is softmax minus one-hot") {
    MilModel m = random_model(12);
    set_zero(m);
    RngStream rng(6, 0);
    const Matrix x = random_matrix(3, 5, rng);
    MilSample s{&x, 1};
    GradientOptions opt;
    opt.loss = LossSpec{LossKind::cross_entropy, 0.0, {1.0, 1.0}, 0.0};
    const MilModel g = backward(m, s, opt);
    CHECK(g.head_output.bias[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.head_output.bias[1] == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("MIL gradients agree with central differences") {
    RngStream rng(21, 0);
    for (int trial = 0; trial < 6; ++trial) {
        const MilModel m = random_model(100 + static_cast<std::uint64_t>(trial));
        const Matrix x = random_matrix(3, 5, rng);
        const Matrix y = random_matrix(4, 5, rng);
        MilSample s{&x, trial % 2};
        GradientOptions opt;
        opt.scale = 0.25;
        if (trial >= 2) {
            s.partner = &y;
            s.partner_label = 1 - s.label;
            s.lambda = 0.37;
        }
        if (trial >= 4) s.dropout = dropout_mask(5, 0.5, rng);
        if (trial == 5) opt.loss = LossSpec{LossKind::cross_entropy, 0.0, {1.0, 1.0}, 0.1};
        const auto r = compare(m, s, opt);
        INFO("trial " << trial << " max abs " << r.max_abs);
        CHECK(r.max_rel <= 1e-4);
    }
}

TEST_CASE("frozen encoder gets exactly zero gradient") {
    const MilModel m = random_model(13);
    RngStream rng(7, 0);
    const Matrix x = random_matrix(3, 5, rng);
    GradientOptions opt;
    opt.freeze_encoder = true;
    const MilModel g = backward(m, MilSample{&x, 1}, opt);
    for (const auto& p : parameters(g)) {
        if (p.group != ParamGroup::backbone) continue;
        for (double v : p.values) CHECK(v == 0.0);
    }
    CHECK(compare(m, MilSample{&x, 1}, opt).max_rel <= 1e-4);
}

TEST_CASE("accumulated loss equals scaled sample loss") {
    const MilModel m = random_model(14);
    RngStream rng(8, 0);
    const Matrix x = random_matrix(3, 5, rng);
    GradientOptions opt;
    opt.scale = 0.125;
    MilModel grads = zeros_like(m);
    const MilSample s{&x, 0};
    const double l = accumulate_gradients(m, s, opt, grads);
    CHECK(l == doctest::Approx(0.125 * sample_loss(m, s, opt.loss)).epsilon(1e-15));
}

TEST_CASE("slice model gradients agree with central differences") {
    RngStream rng(31, 0);
    SliceModel m = init_slice_model(tiny_dims(), 0.3, rng);
    for (auto& p : parameters(m)) {
        for (double& v : p.values) v += 0.3 * rng.normal();
    }
    const LossSpec loss{LossKind::cross_entropy, 0.0, {1.0, 1.0}, 0.1};
    for (int trial = 0; trial < 4; ++trial) {
        Vector x(5);
        for (double& v : x) v = rng.normal();
        const Vector mask = trial % 2 ? dropout_mask(4, 0.3, rng) : Vector{};
        SliceModel grads = zeros_like(m);
        accumulate_slice_gradients(m, x, trial % 2, mask, loss, 1.0, grads);
        auto params = parameters(m);
        const auto g = parameters(std::as_const(grads));
        double worst = 0.0;
        for (std::size_t t = 0; t < params.size(); ++t) {
            for (std::size_t i = 0; i < params[t].values.size(); ++i) {
                double& w = params[t].values[i];
                const double orig = w;
                w = orig + 1e-5;
                const double up = loss.evaluate(slice_logits(m, x, mask), trial % 2).loss;
                w = orig - 1e-5;
                const double down = loss.evaluate(slice_logits(m, x, mask), trial % 2).loss;
                w = orig;
                const double fd = (up - down) / 2e-5;
                const double a = g[t].values[i];
                worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3}));
            }
        }
        CHECK(worst <= 1e-4);
    }
}
