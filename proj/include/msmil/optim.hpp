#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "msmil/model.hpp"

namespace msmil {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Learning rate per parameter group. A group whose rate is unset is frozen
/// for the step: no decay, no moment update, no step count.
struct GroupRates {
    std::optional<double> backbone;
    std::optional<double> head;

    std::optional<double> for_group(ParamGroup g) const { return g == ParamGroup::backbone ? backbone : head; }
};

/// Decoupled-decay Adam. Each tensor keeps its own moments and step count,
/// so a group that starts training late gets a fresh bias correction.
class AdamW {
public:
    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    const AdamWOptions& options() const { return options_; }
    std::size_t steps(std::size_t tensor) const { return tensors_.at(tensor).step; }

    /// p <- p - lr*wd*p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
    void step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, const GroupRates& rates);

    template <typename Model>
    void step(Model& model, const Model& grads, const GroupRates& rates) {
        const auto p = parameters(model);
        const auto g = parameters(grads);
        step(std::span<const ParamRef>(p), std::span<const ConstParamRef>(g), rates);
    }

private:
    struct TensorState {
        std::vector<double> m;
        std::vector<double> v;
        std::size_t step = 0;
    };
    AdamWOptions options_;
    std::vector<TensorState> tensors_;
};

/// Linear ramp from 0 to lr_max over `warmup` epochs, then half-cosine decay
/// to 0 at `total`. `epoch` may be fractional. Throws ValueError unless
/// 0 <= epoch < total and 0 <= warmup < total.
double cosine_warmup_lr(double epoch, double total, double warmup, double lr_max);

/// Tracks the best validation metric; higher is better.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    /// Returns true when `metric` is a new best.
    bool update(double metric);
    bool should_stop() const { return stale_ >= patience_; }
    double best() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }
    std::size_t epochs_seen() const { return seen_; }

private:
    std::size_t patience_;
    std::size_t stale_ = 0;
    std::size_t seen_ = 0;
    std::size_t best_epoch_ = 0;
    double best_ = -1.0;
};

}  // namespace msmil
