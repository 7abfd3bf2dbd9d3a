#pragma once

#include <optional>
#include <span>

#include "msmil/losses.hpp"
#include "msmil/model.hpp"
#include "msmil/numerics.hpp"
#include "msmil/rng.hpp"

namespace msmil {

enum class Mode { train, eval };

/// Pooled scan embedding and the attention weight of every slice.
struct PoolResult {
    Vector z;
    Vector attention;
};

/// Gated attention over the rows of `embeddings` (K x d):
/// v_k = tanh(V h_k), u_k = sigmoid(U h_k), a = softmax_k(w . (v_k * u_k)),
/// z = sum_k a_k h_k.
PoolResult attention_pool(const GatedAttention& attention, const Matrix& embeddings);

/// Encoder applied to every slice; returns K x d.
Matrix encode(const Encoder& encoder, const Matrix& slices);

struct MilOutput {
    Vector logits;     // [non-COVID, COVID]
    Vector attention;
    Vector embedding;  // pooled z
};

/// Inverted-dropout multipliers: 0 with probability `rate`, else 1/(1-rate).
Vector dropout_mask(std::size_t size, double rate, RngStream& rng);

/// Full forward pass. Eval mode ignores `rng`; train mode draws the head
/// dropout mask from it.
MilOutput forward(const MilModel& model, const Matrix& slices, Mode mode, RngStream* rng = nullptr);

/// Head on a pooled embedding with an explicit dropout mask (empty = none).
Vector head_logits(const MilModel& model, std::span<const double> z, std::span<const double> mask = {});

/// Everything the backward pass needs for one training sample.
struct MilSample {
    const Matrix* slices = nullptr;
    int label = 0;
    // Mixup partner; ignored when `partner` is null.
    const Matrix* partner = nullptr;
    int partner_label = 0;
    double lambda = 1.0;
    // Head dropout multipliers; empty disables dropout.
    Vector dropout;
};

struct GradientOptions {
    LossSpec loss;
    bool freeze_encoder = false;
    double scale = 1.0;  // multiplies both loss and gradient
};

/// Adds scale * dLoss/dtheta of one sample to `grads` and returns scale * loss.
/// With `freeze_encoder` the encoder gradients are left untouched.
double accumulate_gradients(const MilModel& model, const MilSample& sample,
                            const GradientOptions& options, MilModel& grads);

/// Loss only; the same computation as accumulate_gradients without gradients.
double sample_loss(const MilModel& model, const MilSample& sample, const LossSpec& loss);

/// Gradients of one sample as a fresh parameter set.
MilModel backward(const MilModel& model, const MilSample& sample, const GradientOptions& options);

// Slice classifier counterparts.
Vector slice_logits(const SliceModel& model, std::span<const double> slice, std::span<const double> mask = {});
double accumulate_slice_gradients(const SliceModel& model, std::span<const double> slice, int label,
                                  std::span<const double> mask, const LossSpec& loss, double scale,
                                  SliceModel& grads);

}  // namespace msmil
