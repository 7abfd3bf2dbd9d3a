#pragma once

#include <array>
#include <span>

#include "msmil/numerics.hpp"

namespace msmil {

/// Loss value and its gradient with respect to the two logits.
struct LossGrad {
    double loss = 0.0;
    std::array<double, 2> dlogits{0.0, 0.0};
};

/// Focal loss -alpha_t (1 - p_t)^gamma log p_t on a 2-class softmax.
/// `alpha` is indexed by class (0 = non-COVID, 1 = COVID).
LossGrad focal_loss(std::span<const double> logits, int target, double gamma,
                    const std::array<double, 2>& alpha);

/// (1 - eps) * CE(target) + eps * mean_c CE(c).
LossGrad ce_label_smoothing(std::span<const double> logits, int target, double epsilon);

enum class LossKind { focal, cross_entropy };

struct LossSpec {
    LossKind kind = LossKind::focal;
    double gamma = 2.0;
    std::array<double, 2> alpha{0.45, 0.55};  // by class index
    double epsilon = 0.0;

    LossGrad evaluate(std::span<const double> logits, int target) const;
};

/// Embedding mixup: z = lambda z_a + (1 - lambda) z_b. The matching loss is
/// lambda L(y_a) + (1 - lambda) L(y_b) evaluated on the mixed prediction.
struct MixedEmbedding {
    Vector z;
    double lambda = 1.0;
    int label_a = 0;
    int label_b = 0;

    LossGrad loss(const LossSpec& spec, std::span<const double> logits) const;
};

MixedEmbedding mixup_embeddings(std::span<const double> z_a, std::span<const double> z_b,
                                int label_a, int label_b, double lambda);

}  // namespace msmil
