#include "msmil/model.hpp"

#include <cmath>

#include "msmil/error.hpp"

namespace msmil {

namespace {

void fill_uniform(std::span<double> values, double bound, RngStream& rng) {
    for (double& v : values) v = (2.0 * rng.uniform() - 1.0) * bound;
}

Linear init_linear(std::size_t in, std::size_t out, RngStream& rng) {
    Linear layer(in, out);
    fill_uniform(layer.weight.values(), 1.0 / std::sqrt(static_cast<double>(in)), rng);
    return layer;
}

void push(std::vector<ParamRef>& out, const std::string& name, Matrix& m, ParamGroup g) {
    out.push_back({name, m.rows(), m.cols(), g, m.values()});
}

void push(std::vector<ParamRef>& out, const std::string& name, Vector& v, ParamGroup g) {
    out.push_back({name, v.size(), 1, g, v});
}

std::vector<ConstParamRef> as_const(std::vector<ParamRef> refs) {
    std::vector<ConstParamRef> out;
    out.reserve(refs.size());
    for (auto& r : refs) out.push_back({std::move(r.name), r.rows, r.cols, r.group, r.values});
    return out;
}

template <typename Model>
void add_scaled_impl(Model& target, const Model& source, double scale) {
    auto dst = parameters(target);
    auto src = parameters(source);
    if (dst.size() != src.size()) throw ShapeError("add_scaled: parameter count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].values.size() != src[i].values.size()) {
            throw ShapeError("add_scaled: shape mismatch in " + dst[i].name);
        }
        axpy(scale, src[i].values, dst[i].values);
    }
}

}  // namespace

ModelDims MilModel::dims() const {
    return {encoder.input_dim(), encoder.hidden.out(), encoder.embed_dim(), attention.attention_dim(),
            head_hidden.out()};
}

std::vector<ParamRef> parameters(Encoder& enc) {
    std::vector<ParamRef> out;
    push(out, "encoder.hidden.weight", enc.hidden.weight, ParamGroup::backbone);
    push(out, "encoder.hidden.bias", enc.hidden.bias, ParamGroup::backbone);
    push(out, "encoder.output.weight", enc.output.weight, ParamGroup::backbone);
    push(out, "encoder.output.bias", enc.output.bias, ParamGroup::backbone);
    return out;
}

std::vector<ParamRef> parameters(MilModel& model) {
    auto out = parameters(model.encoder);
    push(out, "attention.w_v", model.attention.w_v, ParamGroup::head);
    push(out, "attention.w_u", model.attention.w_u, ParamGroup::head);
    push(out, "attention.w", model.attention.w, ParamGroup::head);
    push(out, "head.hidden.weight", model.head_hidden.weight, ParamGroup::head);
    push(out, "head.hidden.bias", model.head_hidden.bias, ParamGroup::head);
    push(out, "head.output.weight", model.head_output.weight, ParamGroup::head);
    push(out, "head.output.bias", model.head_output.bias, ParamGroup::head);
    return out;
}

std::vector<ParamRef> parameters(SliceModel& model) {
    auto out = parameters(model.encoder);
    push(out, "classifier.weight", model.classifier.weight, ParamGroup::head);
    push(out, "classifier.bias", model.classifier.bias, ParamGroup::head);
    return out;
}

std::vector<ConstParamRef> parameters(const MilModel& model) {
    return as_const(parameters(const_cast<MilModel&>(model)));
}

std::vector<ConstParamRef> parameters(const SliceModel& model) {
    return as_const(parameters(const_cast<SliceModel&>(model)));
}

std::size_t parameter_count(const MilModel& model) {
    std::size_t n = 0;
    for (const auto& p : parameters(model)) n += p.values.size();
    return n;
}

Encoder init_encoder(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim, RngStream& rng) {
    if (input_dim == 0 || hidden == 0 || embed_dim == 0) throw ValueError("encoder dims must be positive");
    Encoder enc;
    enc.hidden = init_linear(input_dim, hidden, rng);
    enc.output = init_linear(hidden, embed_dim, rng);
    return enc;
}

MilModel init_mil_model(const Encoder& encoder, const ModelDims& dims, double head_dropout, RngStream& rng) {
    if (dims.attention_dim == 0 || dims.head_hidden == 0) throw ValueError("MIL dims must be positive");
    if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw ValueError("head dropout must be in [0, 1)");
    const std::size_t d = encoder.embed_dim();
    MilModel model;
    model.encoder = encoder;
    model.attention.w_v = Matrix(dims.attention_dim, d);
    model.attention.w_u = Matrix(dims.attention_dim, d);
    model.attention.w = Vector(dims.attention_dim);
    const double att_bound = 1.0 / std::sqrt(static_cast<double>(d));
    fill_uniform(model.attention.w_v.values(), att_bound, rng);
    fill_uniform(model.attention.w_u.values(), att_bound, rng);
    fill_uniform(model.attention.w, 1.0 / std::sqrt(static_cast<double>(dims.attention_dim)), rng);
    model.head_hidden = init_linear(d, dims.head_hidden, rng);
    model.head_output = init_linear(dims.head_hidden, 2, rng);
    model.head_dropout = head_dropout;
    return model;
}

MilModel init_mil_model(const ModelDims& dims, double head_dropout, RngStream& rng) {
    const Encoder enc = init_encoder(dims.input_dim, dims.encoder_hidden, dims.embed_dim, rng);
    return init_mil_model(enc, dims, head_dropout, rng);
}

SliceModel init_slice_model(const ModelDims& dims, double dropout, RngStream& rng) {
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValueError("slice dropout must be in [0, 1)");
    SliceModel model;
    model.encoder = init_encoder(dims.input_dim, dims.encoder_hidden, dims.embed_dim, rng);
    model.classifier = init_linear(dims.embed_dim, 2, rng);
    model.dropout = dropout;
    return model;
}

MilModel zeros_like(const MilModel& model) {
    MilModel out = model;
    set_zero(out);
    return out;
}

SliceModel zeros_like(const SliceModel& model) {
    SliceModel out = model;
    set_zero(out);
    return out;
}

void set_zero(MilModel& model) {
    for (auto& p : parameters(model)) std::fill(p.values.begin(), p.values.end(), 0.0);
}

void set_zero(SliceModel& model) {
    for (auto& p : parameters(model)) std::fill(p.values.begin(), p.values.end(), 0.0);
}

void add_scaled(MilModel& target, const MilModel& source, double scale) {
    add_scaled_impl(target, source, scale);
}

void add_scaled(SliceModel& target, const SliceModel& source, double scale) {
    add_scaled_impl(target, source, scale);
}

MilModel swa_average(std::span<const MilModel> checkpoints) {
    if (checkpoints.empty()) throw ValueError("swa_average: no checkpoints");
    MilModel avg = zeros_like(checkpoints.front());
    const auto reference = checkpoints.front().dims();
    for (const auto& ckpt : checkpoints) {
        if (!(ckpt.dims() == reference)) throw ShapeError("swa_average: checkpoint shapes differ");
        add_scaled(avg, ckpt, 1.0);
    }
    const auto count = static_cast<double>(checkpoints.size());
    for (auto& p : parameters(avg)) {
        for (double& v : p.values) v /= count;
    }
    return avg;
}

bool all_finite(const MilModel& model) {
    for (const auto& p : parameters(model)) {
        if (!all_finite(p.values)) return false;
    }
    return true;
}

}  // namespace msmil
