#include "msmil/losses.hpp"

#include <cmath>

#include "msmil/error.hpp"

namespace msmil {

namespace {

void check_binary(std::span<const double> logits, int target) {
    if (logits.size() != 2) throw ShapeError("loss: expected 2 logits");
    if (target != 0 && target != 1) throw ValueError("loss: target must be 0 or 1");
}

}  // namespace

LossGrad focal_loss(std::span<const double> logits, int target, double gamma,
                    const std::array<double, 2>& alpha) {
    check_binary(logits, target);
    if (!(gamma >= 0.0)) throw ValueError("focal_loss: gamma must be non-negative");
    const Vector logp = log_softmax(logits);
    const Vector p = softmax(logits);
    const auto t = static_cast<std::size_t>(target);
    const double log_pt = logp[t];
    const double pt = p[t];
    const double q = 1.0 - pt;
    const double a = alpha[t];

    LossGrad out;
    const double modulator = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    out.loss = -a * modulator * log_pt;

    // d/dp_t of -(1-p)^g log p, multiplied by p_t so the softmax Jacobian
    // p_t (delta_jt - p_j) folds in cleanly.
    double d_pt_times_pt = -modulator;
    if (gamma != 0.0 && q > 0.0) d_pt_times_pt += gamma * std::pow(q, gamma - 1.0) * pt * log_pt;
    d_pt_times_pt *= a;
    for (std::size_t j = 0; j < 2; ++j) {
        out.dlogits[j] = d_pt_times_pt * ((j == t ? 1.0 : 0.0) - p[j]);
    }
    return out;
}

LossGrad ce_label_smoothing(std::span<const double> logits, int target, double epsilon) {
    check_binary(logits, target);
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValueError("label smoothing: epsilon must be in [0, 1)");
    const Vector logp = log_softmax(logits);
    const Vector p = softmax(logits);
    const auto t = static_cast<std::size_t>(target);
    LossGrad out;
    const double mean_ce = -(logp[0] + logp[1]) / 2.0;
    out.loss = (1.0 - epsilon) * (-logp[t]) + epsilon * mean_ce;
    for (std::size_t j = 0; j < 2; ++j) {
        const double q = (1.0 - epsilon) * (j == t ? 1.0 : 0.0) + epsilon / 2.0;
        out.dlogits[j] = p[j] - q;
    }
    return out;
}

LossGrad LossSpec::evaluate(std::span<const double> logits, int target) const {
    return kind == LossKind::focal ? focal_loss(logits, target, gamma, alpha)
                                   : ce_label_smoothing(logits, target, epsilon);
}

LossGrad MixedEmbedding::loss(const LossSpec& spec, std::span<const double> logits) const {
    if (lambda == 1.0) return spec.evaluate(logits, label_a);
    if (lambda == 0.0) return spec.evaluate(logits, label_b);
    const LossGrad a = spec.evaluate(logits, label_a);
    const LossGrad b = spec.evaluate(logits, label_b);
    LossGrad out;
    out.loss = lambda * a.loss + (1.0 - lambda) * b.loss;
    for (std::size_t j = 0; j < 2; ++j) out.dlogits[j] = lambda * a.dlogits[j] + (1.0 - lambda) * b.dlogits[j];
    return out;
}

MixedEmbedding mixup_embeddings(std::span<const double> z_a, std::span<const double> z_b,
                                int label_a, int label_b, double lambda) {
    if (z_a.size() != z_b.size()) throw ShapeError("mixup: embedding sizes differ");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValueError("mixup: lambda must be in [0, 1]");
    MixedEmbedding out;
    out.lambda = lambda;
    out.label_a = label_a;
    out.label_b = label_b;
    out.z.resize(z_a.size());
    for (std::size_t i = 0; i < z_a.size(); ++i) out.z[i] = lambda * z_a[i] + (1.0 - lambda) * z_b[i];
    return out;
}

}  // namespace msmil
