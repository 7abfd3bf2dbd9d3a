#include "msmil/optim.hpp"

#include <cmath>
#include <numbers>

#include "msmil/error.hpp"

namespace msmil {

void AdamW::step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, const GroupRates& rates) {
    if (params.size() != grads.size()) throw ShapeError("AdamW: parameter/gradient count mismatch");
    if (tensors_.empty()) {
        tensors_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            tensors_[i].m.assign(params[i].values.size(), 0.0);
            tensors_[i].v.assign(params[i].values.size(), 0.0);
        }
    }
    if (tensors_.size() != params.size()) throw ShapeError("AdamW: parameter list changed between steps");

    const auto& o = options_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto lr = rates.for_group(params[i].group);
        if (!lr) continue;
        auto& state = tensors_[i];
        const auto p = params[i].values;
        const auto g = grads[i].values;
        if (p.size() != g.size() || p.size() != state.m.size()) {
            throw ShapeError("AdamW: shape mismatch in " + params[i].name);
        }
        ++state.step;
        const double t = static_cast<double>(state.step);
        const double bc1 = 1.0 - std::pow(o.beta1, t);
        const double bc2 = 1.0 - std::pow(o.beta2, t);
        const double decay = 1.0 - *lr * o.weight_decay;
        for (std::size_t j = 0; j < p.size(); ++j) {
            p[j] *= decay;
            state.m[j] = o.beta1 * state.m[j] + (1.0 - o.beta1) * g[j];
            state.v[j] = o.beta2 * state.v[j] + (1.0 - o.beta2) * g[j] * g[j];
            const double m_hat = state.m[j] / bc1;
            const double v_hat = state.v[j] / bc2;
            p[j] -= *lr * m_hat / (std::sqrt(v_hat) + o.eps);
        }
    }
}

double cosine_warmup_lr(double epoch, double total, double warmup, double lr_max) {
    if (!(total > 0.0) || !(warmup >= 0.0) || warmup >= total) {
        throw ValueError("cosine_warmup_lr: need 0 <= warmup < total");
    }
    if (!(epoch >= 0.0) || epoch >= total) throw ValueError("cosine_warmup_lr: epoch outside [0, total)");
    if (epoch < warmup) return lr_max * epoch / warmup;
    const double progress = (epoch - warmup) / (total - warmup);
    return 0.5 * lr_max * (1.0 + std::cos(std::numbers::pi * progress));
}

bool EarlyStopper::update(double metric) {
    ++seen_;
    if (seen_ == 1 || metric > best_) {
        best_ = metric;
        best_epoch_ = seen_ - 1;
        stale_ = 0;
        return true;
    }
    ++stale_;
    return false;
}

}  // namespace msmil
