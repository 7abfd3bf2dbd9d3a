#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msmil/numerics.hpp"
#include "msmil/rng.hpp"

namespace msmil {

/// Optimizer parameter groups. The encoder stands in for the image backbone.
enum class ParamGroup { backbone, head };

/// y = W x + b
struct Linear {
    Matrix weight;  // out x in
    Vector bias;    // out

    Linear() = default;
    Linear(std::size_t in, std::size_t out) : weight(out, in), bias(out, 0.0) {}
    std::size_t in() const { return weight.cols(); }
    std::size_t out() const { return weight.rows(); }
};

/// Slice encoder: Linear(d_in, hidden) -> ReLU -> Linear(hidden, d).
struct Encoder {
    Linear hidden;
    Linear output;

    std::size_t input_dim() const { return hidden.in(); }
    std::size_t embed_dim() const { return output.out(); }
};

/// Gated attention pooling weights: V and U are L x d, w has L entries.
struct GatedAttention {
    Matrix w_v;
    Matrix w_u;
    Vector w;

    std::size_t attention_dim() const { return w.size(); }
};

struct ModelDims {
    std::size_t input_dim = 64;
    std::size_t encoder_hidden = 64;
    std::size_t embed_dim = 32;
    std::size_t attention_dim = 16;
    std::size_t head_hidden = 32;

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Encoder -> gated attention pooling -> Linear(d, h) -> ReLU -> Dropout -> Linear(h, 2).
/// Output index 1 is the COVID logit.
struct MilModel {
    Encoder encoder;
    GatedAttention attention;
    Linear head_hidden;
    Linear head_output;
    double head_dropout = 0.5;

    ModelDims dims() const;
};

/// Encoder -> Dropout -> Linear(d, 2), trained on individual slices.
struct SliceModel {
    Encoder encoder;
    Linear classifier;
    double dropout = 0.3;
};

/// Mutable view of one parameter tensor, in declaration order.
struct ParamRef {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    ParamGroup group = ParamGroup::head;
    std::span<double> values;
};

struct ConstParamRef {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    ParamGroup group = ParamGroup::head;
    std::span<const double> values;
};

std::vector<ParamRef> parameters(Encoder& enc);
std::vector<ParamRef> parameters(MilModel& model);
std::vector<ParamRef> parameters(SliceModel& model);
std::vector<ConstParamRef> parameters(const MilModel& model);
std::vector<ConstParamRef> parameters(const SliceModel& model);

std::size_t parameter_count(const MilModel& model);

/// Layers draw weights from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// biases start at zero.
Encoder init_encoder(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim, RngStream& rng);
MilModel init_mil_model(const ModelDims& dims, double head_dropout, RngStream& rng);
MilModel init_mil_model(const Encoder& encoder, const ModelDims& dims, double head_dropout, RngStream& rng);
SliceModel init_slice_model(const ModelDims& dims, double dropout, RngStream& rng);

/// Same shapes, every parameter zero. Used as a gradient buffer.
MilModel zeros_like(const MilModel& model);
SliceModel zeros_like(const SliceModel& model);
void set_zero(MilModel& model);
void set_zero(SliceModel& model);

/// target += scale * source, tensor by tensor. Shapes must match.
void add_scaled(MilModel& target, const MilModel& source, double scale);
void add_scaled(SliceModel& target, const SliceModel& source, double scale);

/// Elementwise mean of parameter sets with identical shapes.
MilModel swa_average(std::span<const MilModel> checkpoints);

bool all_finite(const MilModel& model);

}  // namespace msmil
