#include "msmil/mil.hpp"

#include <algorithm>
#include <cmath>

#include "msmil/error.hpp"

namespace msmil {

namespace {

struct EncoderTrace {
    Matrix pre;  // K x hidden, before ReLU
    Matrix act;  // K x hidden
    Matrix h;    // K x d
};

struct PoolTrace {
    Matrix v;  // K x L, tanh gate
    Matrix u;  // K x L, sigmoid gate
    Vector attention;
    Vector z;
};

struct HeadTrace {
    Vector pre;
    Vector dropped;  // ReLU output after the dropout mask
    Vector logits;
};

void linear_into(const Linear& layer, std::span<const double> x, std::span<double> y) {
    for (std::size_t r = 0; r < layer.out(); ++r) y[r] = layer.bias[r] + dot(layer.weight.row(r), x);
}

EncoderTrace encode_traced(const Encoder& enc, const Matrix& slices) {
    if (slices.cols() != enc.input_dim()) {
        throw ShapeError("encoder: slice dim " + std::to_string(slices.cols()) + ", expected " +
                         std::to_string(enc.input_dim()));
    }
    if (slices.rows() == 0) throw ShapeError("encoder: empty bag");
    const std::size_t k = slices.rows();
    EncoderTrace t{Matrix(k, enc.hidden.out()), Matrix(k, enc.hidden.out()), Matrix(k, enc.embed_dim())};
    for (std::size_t i = 0; i < k; ++i) {
        auto pre = t.pre.row(i);
        linear_into(enc.hidden, slices.row(i), pre);
        auto act = t.act.row(i);
        for (std::size_t j = 0; j < pre.size(); ++j) act[j] = pre[j] > 0.0 ? pre[j] : 0.0;
        linear_into(enc.output, act, t.h.row(i));
    }
    return t;
}

PoolTrace pool_traced(const GatedAttention& att, const Matrix& h) {
    if (h.rows() == 0) throw ShapeError("attention_pool: empty bag");
    if (att.w_v.cols() != h.cols() || att.w_u.cols() != h.cols()) {
        throw ShapeError("attention_pool: embedding dim does not match attention weights");
    }
    if (att.w_v.rows() != att.w.size() || att.w_u.rows() != att.w.size()) {
        throw ShapeError("attention_pool: inconsistent attention dim");
    }
    const std::size_t k = h.rows();
    const std::size_t l = att.w.size();
    PoolTrace t{Matrix(k, l), Matrix(k, l), Vector(k), Vector(h.cols(), 0.0)};
    Vector scores(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto hk = h.row(i);
        auto v = t.v.row(i);
        auto u = t.u.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < l; ++j) {
            v[j] = tanh_act(dot(att.w_v.row(j), hk));
            u[j] = sigmoid(dot(att.w_u.row(j), hk));
            s += att.w[j] * v[j] * u[j];
        }
        scores[i] = s;
    }
    t.attention = softmax(scores);
    for (std::size_t i = 0; i < k; ++i) axpy(t.attention[i], h.row(i), t.z);
    return t;
}

HeadTrace head_traced(const MilModel& model, std::span<const double> z, std::span<const double> mask) {
    const std::size_t hidden = model.head_hidden.out();
    if (z.size() != model.head_hidden.in()) throw ShapeError("head: embedding dim mismatch");
    if (!mask.empty() && mask.size() != hidden) throw ShapeError("head: dropout mask size mismatch");
    HeadTrace t{Vector(hidden), Vector(hidden), Vector(2)};
    linear_into(model.head_hidden, z, t.pre);
    for (std::size_t j = 0; j < hidden; ++j) {
        const double a = t.pre[j] > 0.0 ? t.pre[j] : 0.0;
        t.dropped[j] = mask.empty() ? a : a * mask[j];
    }
    linear_into(model.head_output, t.dropped, t.logits);
    return t;
}

// Returns dL/dz and accumulates head gradients.
Vector head_backward(const MilModel& model, const HeadTrace& t, std::span<const double> z,
                     std::span<const double> mask, std::span<const double> dlogits, MilModel& g) {
    add_outer(g.head_output.weight, 1.0, dlogits, t.dropped);
    axpy(1.0, dlogits, g.head_output.bias);
    Vector dpre = matvec_transposed(model.head_output.weight, dlogits);
    for (std::size_t j = 0; j < dpre.size(); ++j) {
        if (!mask.empty()) dpre[j] *= mask[j];
        if (!(t.pre[j] > 0.0)) dpre[j] = 0.0;
    }
    add_outer(g.head_hidden.weight, 1.0, dpre, z);
    axpy(1.0, dpre, g.head_hidden.bias);
    return matvec_transposed(model.head_hidden.weight, dpre);
}

// Returns dL/dh (K x d) and accumulates attention gradients.
Matrix pool_backward(const GatedAttention& att, const Matrix& h, const PoolTrace& t,
                     std::span<const double> dz, GatedAttention& g) {
    const std::size_t k = h.rows();
    const std::size_t l = att.w.size();
    Matrix dh(k, h.cols());
    Vector da(k);
    double weighted = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        da[i] = dot(dz, h.row(i));
        weighted += t.attention[i] * da[i];
        axpy(t.attention[i], dz, dh.row(i));
    }
    Vector dpv(l);
    Vector dpu(l);
    for (std::size_t i = 0; i < k; ++i) {
        const double ds = t.attention[i] * (da[i] - weighted);
        if (ds == 0.0) continue;
        const auto v = t.v.row(i);
        const auto u = t.u.row(i);
        for (std::size_t j = 0; j < l; ++j) {
            g.w[j] += ds * v[j] * u[j];
            const double dgate = ds * att.w[j];
            dpv[j] = dgate * u[j] * (1.0 - v[j] * v[j]);
            dpu[j] = dgate * v[j] * u[j] * (1.0 - u[j]);
        }
        const auto hk = h.row(i);
        add_outer(g.w_v, 1.0, dpv, hk);
        add_outer(g.w_u, 1.0, dpu, hk);
        auto dhk = dh.row(i);
        for (std::size_t j = 0; j < l; ++j) {
            axpy(dpv[j], att.w_v.row(j), dhk);
            axpy(dpu[j], att.w_u.row(j), dhk);
        }
    }
    return dh;
}

void encoder_backward(const Encoder& enc, const Matrix& slices, const EncoderTrace& t, const Matrix& dh,
                      Encoder& g) {
    Vector dpre(enc.hidden.out());
    for (std::size_t i = 0; i < slices.rows(); ++i) {
        const auto dhi = dh.row(i);
        add_outer(g.output.weight, 1.0, dhi, t.act.row(i));
        axpy(1.0, dhi, g.output.bias);
        std::fill(dpre.begin(), dpre.end(), 0.0);
        for (std::size_t r = 0; r < enc.output.out(); ++r) axpy(dhi[r], enc.output.weight.row(r), dpre);
        const auto pre = t.pre.row(i);
        for (std::size_t j = 0; j < dpre.size(); ++j) {
            if (!(pre[j] > 0.0)) dpre[j] = 0.0;
        }
        add_outer(g.hidden.weight, 1.0, dpre, slices.row(i));
        axpy(1.0, dpre, g.hidden.bias);
    }
}

struct BagState {
    EncoderTrace enc;
    PoolTrace pool;
};

BagState run_bag(const MilModel& model, const Matrix& slices) {
    BagState s{encode_traced(model.encoder, slices), {}};
    s.pool = pool_traced(model.attention, s.enc.h);
    return s;
}

void backprop_bag(const MilModel& model, const Matrix& slices, const BagState& s, std::span<const double> dz,
                  bool freeze_encoder, MilModel& grads) {
    const Matrix dh = pool_backward(model.attention, s.enc.h, s.pool, dz, grads.attention);
    if (!freeze_encoder) encoder_backward(model.encoder, slices, s.enc, dh, grads.encoder);
}

struct SampleForward {
    BagState anchor;
    std::optional<BagState> partner;
    MixedEmbedding mixed;
    HeadTrace head;
    LossGrad loss;
};

SampleForward sample_forward(const MilModel& model, const MilSample& sample, const LossSpec& loss) {
    if (sample.slices == nullptr) throw ValueError("MIL sample without slices");
    SampleForward f;
    f.anchor = run_bag(model, *sample.slices);
    if (sample.partner != nullptr) {
        f.partner = run_bag(model, *sample.partner);
        f.mixed = mixup_embeddings(f.anchor.pool.z, f.partner->pool.z, sample.label, sample.partner_label,
                                   sample.lambda);
    } else {
        f.mixed = MixedEmbedding{f.anchor.pool.z, 1.0, sample.label, sample.label};
    }
    f.head = head_traced(model, f.mixed.z, sample.dropout);
    f.loss = f.mixed.loss(loss, f.head.logits);
    return f;
}

}  // namespace

PoolResult attention_pool(const GatedAttention& attention, const Matrix& embeddings) {
    PoolTrace t = pool_traced(attention, embeddings);
    return {std::move(t.z), std::move(t.attention)};
}

Matrix encode(const Encoder& encoder, const Matrix& slices) { return encode_traced(encoder, slices).h; }

Vector dropout_mask(std::size_t size, double rate, RngStream& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ValueError("dropout rate must be in [0, 1)");
    Vector mask(size, 1.0);
    if (rate == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

Vector head_logits(const MilModel& model, std::span<const double> z, std::span<const double> mask) {
    return head_traced(model, z, mask).logits;
}

MilOutput forward(const MilModel& model, const Matrix& slices, Mode mode, RngStream* rng) {
    const BagState s = run_bag(model, slices);
    Vector mask;
    if (mode == Mode::train && model.head_dropout > 0.0) {
        if (rng == nullptr) throw ValueError("forward: train mode needs an RNG for dropout");
        mask = dropout_mask(model.head_hidden.out(), model.head_dropout, *rng);
    }
    HeadTrace head = head_traced(model, s.pool.z, mask);
    return {std::move(head.logits), s.pool.attention, s.pool.z};
}

double sample_loss(const MilModel& model, const MilSample& sample, const LossSpec& loss) {
    return sample_forward(model, sample, loss).loss.loss;
}

double accumulate_gradients(const MilModel& model, const MilSample& sample, const GradientOptions& options,
                            MilModel& grads) {
    const SampleForward f = sample_forward(model, sample, options.loss);
    const std::array<double, 2> dlogits{options.scale * f.loss.dlogits[0], options.scale * f.loss.dlogits[1]};
    const Vector dz = head_backward(model, f.head, f.mixed.z, sample.dropout, dlogits, grads);
    if (f.partner) {
        const double lambda = f.mixed.lambda;
        if (lambda != 0.0) {
            Vector dza = dz;
            for (double& v : dza) v *= lambda;
            backprop_bag(model, *sample.slices, f.anchor, dza, options.freeze_encoder, grads);
        }
        if (lambda != 1.0) {
            Vector dzb = dz;
            for (double& v : dzb) v *= 1.0 - lambda;
            backprop_bag(model, *sample.partner, *f.partner, dzb, options.freeze_encoder, grads);
        }
    } else {
        backprop_bag(model, *sample.slices, f.anchor, dz, options.freeze_encoder, grads);
    }
    return options.scale * f.loss.loss;
}

MilModel backward(const MilModel& model, const MilSample& sample, const GradientOptions& options) {
    MilModel grads = zeros_like(model);
    accumulate_gradients(model, sample, options, grads);
    return grads;
}

namespace {

struct SliceTrace {
    EncoderTrace enc;
    Vector dropped;
    Vector logits;
};

SliceTrace slice_traced(const SliceModel& model, std::span<const double> slice, std::span<const double> mask) {
    const Matrix one(1, slice.size(), Vector(slice.begin(), slice.end()));
    SliceTrace t{encode_traced(model.encoder, one), {}, Vector(2)};
    const auto h = t.enc.h.row(0);
    if (!mask.empty() && mask.size() != h.size()) throw ShapeError("slice head: dropout mask size mismatch");
    t.dropped.assign(h.begin(), h.end());
    if (!mask.empty()) {
        for (std::size_t j = 0; j < h.size(); ++j) t.dropped[j] *= mask[j];
    }
    linear_into(model.classifier, t.dropped, t.logits);
    return t;
}

}  // namespace

Vector slice_logits(const SliceModel& model, std::span<const double> slice, std::span<const double> mask) {
    return slice_traced(model, slice, mask).logits;
}

double accumulate_slice_gradients(const SliceModel& model, std::span<const double> slice, int label,
                                  std::span<const double> mask, const LossSpec& loss, double scale,
                                  SliceModel& grads) {
    const SliceTrace t = slice_traced(model, slice, mask);
    const LossGrad lg = loss.evaluate(t.logits, label);
    const std::array<double, 2> dlogits{scale * lg.dlogits[0], scale * lg.dlogits[1]};
    add_outer(grads.classifier.weight, 1.0, dlogits, t.dropped);
    axpy(1.0, dlogits, grads.classifier.bias);
    Matrix dh(1, model.encoder.embed_dim());
    auto row = dh.row(0);
    for (std::size_t r = 0; r < 2; ++r) axpy(dlogits[r], model.classifier.weight.row(r), row);
    if (!mask.empty()) {
        for (std::size_t j = 0; j < row.size(); ++j) row[j] *= mask[j];
    }
    const Matrix one(1, slice.size(), Vector(slice.begin(), slice.end()));
    encoder_backward(model.encoder, one, t.enc, dh, grads.encoder);
    return scale * lg.loss;
}

}  // namespace msmil
