#include "msmil/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "msmil/error.hpp"
#include "msmil/metrics.hpp"
#include "msmil/optim.hpp"

namespace msmil {

namespace {

// RNG stream ids. Each consumer owns a stream so changing one never shifts
// another's draws.
constexpr std::uint64_t kPhase1Init = 11;
constexpr std::uint64_t kPhase1Dropout = 12;
constexpr std::uint64_t kPhase2Init = 21;
constexpr std::uint64_t kPhase1Sampler = 1ULL << 32;
constexpr std::uint64_t kPhase2Sampler = 2ULL << 32;
constexpr std::uint64_t kPhase2Draws = 3ULL << 32;
constexpr std::uint64_t kSwaSampler = 4ULL << 32;
constexpr std::uint64_t kSwaDraws = 5ULL << 32;

using Json = nlohmann::json;

/// Reads keys from a JSON object and rejects any it was not asked about.
class StrictObject {
public:
    StrictObject(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw FormatError(where_ + ": expected an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where_ + "." + key + ": " + e.what());
        }
    }

    const Json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw FormatError(where_ + ": unknown key '" + key + "'");
        }
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::vector<std::size_t> labeled_check(const Dataset& data, const char* what) {
    if (data.bags.empty()) throw ValueError(std::string(what) + ": empty dataset");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.bags.size(); ++i) {
        if (!data.bags[i].label) throw ValueError(std::string(what) + ": unlabeled scan " + data.bags[i].scan_id);
        idx.push_back(i);
    }
    return idx;
}

double mil_prob(const MilModel& model, const Matrix& slices) {
    const auto out = forward(model, slices, Mode::eval);
    return softmax(out.logits)[1];
}

double metric_on(const MilModel& model, const std::vector<Matrix>& bags, const Dataset& val) {
    std::vector<int> preds;
    std::vector<int> truths;
    std::vector<SourceId> sources;
    for (std::size_t i = 0; i < bags.size(); ++i) {
        preds.push_back(mil_prob(model, bags[i]) >= 0.5 ? 1 : 0);
        truths.push_back(*val.bags[i].label);
        sources.push_back(val.bags[i].source);
    }
    return challenge_metric(preds, truths, sources, val.source_count).score;
}

EpochPlan scan_epoch(const std::vector<SampleRef>& items, const TrainConfig& config, int source_count,
                     std::uint64_t stream) {
    RngStream rng(config.seed, stream);
    const std::size_t effective = config.phase2.batch_size * config.phase2.accumulation_steps;
    if (config.phase2.sampler == ScanSampler::stratified) {
        std::set<SourceId> present;
        for (const auto& it : items) present.insert(it.source);
        if (static_cast<int>(present.size()) == source_count) {
            return build_epoch(items, source_count, std::max<std::size_t>(effective, source_count), rng);
        }
        // Some declared source has no training scans; stratify over the remainder.
        std::vector<SampleRef> remapped = items;
        std::vector<SourceId> order(present.begin(), present.end());
        for (auto& it : remapped) {
            it.source = static_cast<SourceId>(std::find(order.begin(), order.end(), it.source) - order.begin());
        }
        auto plan = build_epoch(remapped, static_cast<int>(order.size()),
                                std::max<std::size_t>(effective, order.size()), rng);
        for (auto& batch : plan.batches) {
            for (auto& it : batch) it.source = order[static_cast<std::size_t>(it.source)];
        }
        return plan;
    }
    return build_shuffled_epoch(items, effective, rng);
}

struct Phase2Loop {
    const TrainConfig& config;
    const std::vector<Matrix>& bags;
    const std::vector<int>& labels;
    GradientOptions options;

    // One epoch of effective-batch updates. Returns the mean training loss.
    double run_epoch(MilModel& model, AdamW& opt, const EpochPlan& plan, RngStream& draws,
                     const std::function<GroupRates(double)>& rates_at) const {
        const auto& p2 = config.phase2;
        double loss_sum = 0.0;
        std::size_t count = 0;
        MilModel grads = zeros_like(model);
        for (std::size_t b = 0; b < plan.batches.size(); ++b) {
            const auto& batch = plan.batches[b];
            const auto sample_draws = draw_effective_batch(batch, model, p2, draws);
            set_zero(grads);
            const GroupRates rates = rates_at(static_cast<double>(b) / static_cast<double>(plan.batches.size()));
            GradientOptions opts = options;
            opts.freeze_encoder = !rates.backbone.has_value();
            const double loss = accumulate_effective_batch(model, sample_draws, bags, labels, p2.batch_size, opts, grads);
            opt.step(model, grads, rates);
            loss_sum += loss * static_cast<double>(batch.size());
            count += batch.size();
        }
        return count ? loss_sum / static_cast<double>(count) : 0.0;
    }
};

}  // namespace

void TrainConfig::validate() const {
    const auto positive = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ValueError(std::string("config: ") + what + " must be positive");
    };
    const auto& p1 = phase1;
    const auto& p2 = phase2;
    if (dims.encoder_hidden == 0 || dims.embed_dim == 0 || dims.attention_dim == 0 || dims.head_hidden == 0) {
        throw ValueError("config: model dims must be positive");
    }
    if (p1.epochs == 0 || p1.batch_size == 0 || p1.max_slices_per_scan == 0) {
        throw ValueError("config: phase1 epochs, batch_size and max_slices_per_scan must be positive");
    }
    positive(p1.lr, "phase1.lr");
    if (p1.weight_decay < 0.0) throw ValueError("config: phase1.weight_decay must be non-negative");
    if (!(p1.warmup_epochs >= 0.0) || p1.warmup_epochs >= static_cast<double>(p1.epochs)) {
        throw ValueError("config: phase1.warmup_epochs must be in [0, epochs)");
    }
    if (!(p1.label_smoothing >= 0.0 && p1.label_smoothing < 1.0)) throw ValueError("config: label_smoothing in [0, 1)");
    if (!(p1.dropout >= 0.0 && p1.dropout < 1.0)) throw ValueError("config: phase1.dropout in [0, 1)");

    if (p2.k_train == 0 || p2.k_eval == 0 || p2.epochs == 0 || p2.batch_size == 0 || p2.accumulation_steps == 0) {
        throw ValueError("config: phase2 K, epochs, batch_size and accumulation_steps must be positive");
    }
    positive(p2.lr_backbone, "phase2.lr_backbone");
    positive(p2.lr_head, "phase2.lr_head");
    if (p2.weight_decay < 0.0) throw ValueError("config: phase2.weight_decay must be non-negative");
    if (!(p2.warmup_epochs >= 0.0) || p2.warmup_epochs >= static_cast<double>(p2.epochs)) {
        throw ValueError("config: phase2.warmup_epochs must be in [0, epochs)");
    }
    if (p2.focal_gamma < 0.0) throw ValueError("config: focal_gamma must be non-negative");
    if (p2.focal_alpha[0] < 0.0 || p2.focal_alpha[1] < 0.0 ||
        std::abs(p2.focal_alpha[0] + p2.focal_alpha[1] - 1.0) > 1e-9) {
        throw ValueError("config: focal_alpha must be a distribution over two classes");
    }
    positive(p2.mixup_beta[0], "mixup_beta[0]");
    positive(p2.mixup_beta[1], "mixup_beta[1]");
    if (!(p2.head_dropout >= 0.0 && p2.head_dropout < 1.0)) throw ValueError("config: head_dropout in [0, 1)");
    positive(p2.swa_lr_scale, "phase2.swa_lr_scale");
}

LossSpec TrainConfig::phase2_loss() const {
    LossSpec spec;
    spec.kind = LossKind::focal;
    spec.gamma = phase2.focal_gamma;
    // Config lists [COVID, non-COVID]; the loss indexes by class label.
    spec.alpha = {phase2.focal_alpha[1], phase2.focal_alpha[0]};
    return spec;
}

LossSpec TrainConfig::phase1_loss() const {
    LossSpec spec;
    spec.kind = LossKind::cross_entropy;
    spec.epsilon = phase1.label_smoothing;
    return spec;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    StrictObject root(j, "config");
    int version = 0;
    root.read("schema_version", version);
    if (version != 1) throw FormatError("config: schema_version must be 1");
    root.read("seed", c.seed);
    if (const Json* m = root.child("model")) {
        StrictObject o(*m, "config.model");
        o.read("encoder_hidden", c.dims.encoder_hidden);
        o.read("embed_dim", c.dims.embed_dim);
        o.read("attention_dim", c.dims.attention_dim);
        o.read("head_hidden", c.dims.head_hidden);
        o.finish();
    }
    if (const Json* p = root.child("phase1")) {
        StrictObject o(*p, "config.phase1");
        auto& p1 = c.phase1;
        o.read("epochs", p1.epochs);
        o.read("lr", p1.lr);
        o.read("weight_decay", p1.weight_decay);
        o.read("warmup_epochs", p1.warmup_epochs);
        o.read("label_smoothing", p1.label_smoothing);
        o.read("batch_size", p1.batch_size);
        o.read("max_slices_per_scan", p1.max_slices_per_scan);
        o.read("dropout", p1.dropout);
        o.finish();
    }
    if (const Json* p = root.child("phase2")) {
        StrictObject o(*p, "config.phase2");
        auto& p2 = c.phase2;
        o.read("k_train", p2.k_train);
        o.read("k_eval", p2.k_eval);
        o.read("epochs", p2.epochs);
        o.read("patience", p2.patience);
        o.read("freeze_epochs", p2.freeze_epochs);
        o.read("lr_backbone", p2.lr_backbone);
        o.read("lr_head", p2.lr_head);
        o.read("weight_decay", p2.weight_decay);
        o.read("warmup_epochs", p2.warmup_epochs);
        o.read("batch_size", p2.batch_size);
        o.read("accumulation_steps", p2.accumulation_steps);
        o.read("focal_gamma", p2.focal_gamma);
        o.read("focal_alpha", p2.focal_alpha);
        o.read("mixup", p2.mixup);
        o.read("mixup_beta", p2.mixup_beta);
        o.read("head_dropout", p2.head_dropout);
        o.read("swa_epochs", p2.swa_epochs);
        o.read("swa_lr_scale", p2.swa_lr_scale);
        std::string sampler = p2.sampler == ScanSampler::stratified ? "stratified" : "shuffled";
        o.read("sampler", sampler);
        if (sampler == "stratified") p2.sampler = ScanSampler::stratified;
        else if (sampler == "shuffled") p2.sampler = ScanSampler::shuffled;
        else throw FormatError("config.phase2.sampler: expected 'stratified' or 'shuffled'");
        o.finish();
    }
    root.finish();
    c.validate();
    return c;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["seed"] = c.seed;
    j["model"] = {{"encoder_hidden", c.dims.encoder_hidden},
                  {"embed_dim", c.dims.embed_dim},
                  {"attention_dim", c.dims.attention_dim},
                  {"head_hidden", c.dims.head_hidden}};
    const auto& p1 = c.phase1;
    j["phase1"] = {{"epochs", p1.epochs},
                   {"lr", p1.lr},
                   {"weight_decay", p1.weight_decay},
                   {"warmup_epochs", p1.warmup_epochs},
                   {"label_smoothing", p1.label_smoothing},
                   {"batch_size", p1.batch_size},
                   {"max_slices_per_scan", p1.max_slices_per_scan},
                   {"dropout", p1.dropout}};
    const auto& p2 = c.phase2;
    j["phase2"] = {{"k_train", p2.k_train},
                   {"k_eval", p2.k_eval},
                   {"epochs", p2.epochs},
                   {"patience", p2.patience},
                   {"freeze_epochs", p2.freeze_epochs},
                   {"lr_backbone", p2.lr_backbone},
                   {"lr_head", p2.lr_head},
                   {"weight_decay", p2.weight_decay},
                   {"warmup_epochs", p2.warmup_epochs},
                   {"batch_size", p2.batch_size},
                   {"accumulation_steps", p2.accumulation_steps},
                   {"focal_gamma", p2.focal_gamma},
                   {"focal_alpha", p2.focal_alpha},
                   {"mixup", p2.mixup},
                   {"mixup_beta", p2.mixup_beta},
                   {"head_dropout", p2.head_dropout},
                   {"swa_epochs", p2.swa_epochs},
                   {"swa_lr_scale", p2.swa_lr_scale},
                   {"sampler", p2.sampler == ScanSampler::stratified ? "stratified" : "shuffled"}};
    return j;
}

Phase1Result train_phase1(const Dataset& train, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    labeled_check(train, "train_phase1");
    const auto& p1 = config.phase1;

    // Flatten the uniformly spaced slice subset of every scan.
    const std::size_t d_in = train.bags.front().dim();
    std::vector<Vector> slices;
    std::vector<SampleRef> items;
    for (const auto& bag : train.bags) {
        if (bag.dim() != d_in) throw ShapeError("train_phase1: inconsistent slice dimension");
        for (std::size_t idx : uniform_subsample_indices(bag.slice_count(), p1.max_slices_per_scan)) {
            const auto row = bag.slices.row(idx);
            items.push_back({slices.size(), bag.source, *bag.label});
            slices.emplace_back(row.begin(), row.end());
        }
    }

    ModelDims dims = config.dims;
    dims.input_dim = d_in;
    RngStream init_rng(config.seed, kPhase1Init);
    RngStream dropout_rng(config.seed, kPhase1Dropout);
    Phase1Result result{init_slice_model(dims, p1.dropout, init_rng), {}, {}};
    SliceModel& model = result.model;
    SliceModel grads = zeros_like(model);
    AdamW opt({0.9, 0.999, 1e-8, p1.weight_decay});
    const LossSpec loss = config.phase1_loss();
    const auto total = static_cast<double>(p1.epochs);

    for (std::size_t epoch = 0; epoch < p1.epochs; ++epoch) {
        RngStream sampler_rng(config.seed, kPhase1Sampler + epoch);
        const EpochPlan plan = build_balanced_epoch(items, train.source_count,
                                                    std::max<std::size_t>(p1.batch_size, 2 * train.source_count),
                                                    sampler_rng);
        if (epoch == 0) result.warnings = plan.warnings;
        double loss_sum = 0.0;
        std::size_t seen = 0;
        double lr = 0.0;
        for (std::size_t b = 0; b < plan.batches.size(); ++b) {
            const auto& batch = plan.batches[b];
            set_zero(grads);
            const double scale = 1.0 / static_cast<double>(batch.size());
            for (const auto& ref : batch) {
                const Vector mask = dropout_mask(dims.embed_dim, p1.dropout, dropout_rng);
                loss_sum += accumulate_slice_gradients(model, slices[ref.index], ref.label, mask, loss, scale, grads) /
                            scale;
                ++seen;
            }
            lr = cosine_warmup_lr(static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(plan.batches.size()),
                                  total, p1.warmup_epochs, p1.lr);
            opt.step(model, grads, GroupRates{lr, lr});
        }
        EpochRecord rec;
        rec.phase = "phase1";
        rec.epoch = epoch;
        rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        rec.lr_backbone = lr;
        rec.lr_head = lr;
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

double slice_accuracy(const SliceModel& model, const Dataset& data, std::size_t max_slices_per_scan) {
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto& bag : data.bags) {
        if (!bag.label) continue;
        for (std::size_t idx : uniform_subsample_indices(bag.slice_count(), max_slices_per_scan)) {
            const Vector logits = slice_logits(model, bag.slices.row(idx));
            const int pred = logits[1] > logits[0] ? 1 : 0;
            correct += pred == *bag.label ? 1 : 0;
            ++total;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

std::vector<SampleDraw> draw_effective_batch(const std::vector<SampleRef>& batch, const MilModel& model,
                                             const Phase2Config& config, RngStream& rng) {
    const std::size_t n = batch.size();
    std::vector<SampleDraw> draws(n);
    for (std::size_t i = 0; i < n; ++i) draws[i].bag = batch[i].index;
    if (config.mixup && n >= 2) {
        // Each sample is paired with its successor in a random cyclic order,
        // so nobody is paired with itself.
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        for (std::size_t i = 0; i < n; ++i) draws[order[i]].partner = batch[order[(i + 1) % n]].index;
        for (auto& d : draws) d.lambda = sample_beta(rng, config.mixup_beta[0], config.mixup_beta[1]);
    }
    if (model.head_dropout > 0.0) {
        for (auto& d : draws) d.dropout = dropout_mask(model.head_hidden.out(), model.head_dropout, rng);
    }
    return draws;
}

double accumulate_effective_batch(const MilModel& model, const std::vector<SampleDraw>& draws,
                                  const std::vector<Matrix>& bags, const std::vector<int>& labels,
                                  std::size_t micro_batch, const GradientOptions& options, MilModel& grads) {
    if (micro_batch == 0) throw ValueError("micro batch size must be positive");
    if (draws.empty()) return 0.0;
    const auto n = static_cast<double>(draws.size());
    MilModel micro = zeros_like(model);
    double loss = 0.0;
    for (std::size_t start = 0; start < draws.size(); start += micro_batch) {
        const std::size_t end = std::min(draws.size(), start + micro_batch);
        const auto m = static_cast<double>(end - start);
        set_zero(micro);
        double micro_loss = 0.0;
        GradientOptions opts = options;
        opts.scale = options.scale / m;
        for (std::size_t i = start; i < end; ++i) {
            const auto& d = draws[i];
            MilSample sample;
            sample.slices = &bags.at(d.bag);
            sample.label = labels.at(d.bag);
            if (d.partner) {
                sample.partner = &bags.at(*d.partner);
                sample.partner_label = labels.at(*d.partner);
                sample.lambda = d.lambda;
            }
            sample.dropout = d.dropout;
            micro_loss += accumulate_gradients(model, sample, opts, micro);
        }
        add_scaled(grads, micro, m / n);
        loss += micro_loss * m / n;
    }
    return loss;
}

double validation_metric(const MilModel& model, const Dataset& val, std::size_t k_eval) {
    labeled_check(val, "validation_metric");
    std::vector<Matrix> bags;
    for (const auto& bag : val.bags) bags.push_back(uniform_subsample(bag.slices, k_eval));
    return metric_on(model, bags, val);
}

Phase2Result train_phase2(const Dataset& train, const Dataset* val, const Encoder& encoder,
                          const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    labeled_check(train, "train_phase2");
    const auto& p2 = config.phase2;
    if (train.bags.front().dim() != encoder.input_dim()) {
        throw ShapeError("train_phase2: encoder input dim does not match slice dim");
    }

    std::vector<Matrix> bags;
    std::vector<int> labels;
    std::vector<SampleRef> items;
    for (std::size_t i = 0; i < train.bags.size(); ++i) {
        bags.push_back(uniform_subsample(train.bags[i].slices, p2.k_train));
        labels.push_back(*train.bags[i].label);
        items.push_back({i, train.bags[i].source, labels.back()});
    }
    std::vector<Matrix> val_bags;
    if (val != nullptr) {
        labeled_check(*val, "train_phase2 validation");
        for (const auto& bag : val->bags) val_bags.push_back(uniform_subsample(bag.slices, p2.k_eval));
    }

    ModelDims dims = config.dims;
    dims.input_dim = encoder.input_dim();
    RngStream init_rng(config.seed, kPhase2Init);
    MilModel model = init_mil_model(encoder, dims, p2.head_dropout, init_rng);

    Phase2Result result;
    result.best = model;
    AdamW opt({0.9, 0.999, 1e-8, p2.weight_decay});
    const Phase2Loop loop{config, bags, labels, GradientOptions{config.phase2_loss(), false, 1.0}};
    EarlyStopper stopper(p2.patience);
    const auto total = static_cast<double>(p2.epochs);

    for (std::size_t epoch = 0; epoch < p2.epochs; ++epoch) {
        const EpochPlan plan = scan_epoch(items, config, train.source_count, kPhase2Sampler + epoch);
        RngStream draws(config.seed, kPhase2Draws + epoch);
        const bool frozen = epoch < p2.freeze_epochs;
        const auto rates_at = [&](double fraction) {
            const double t = static_cast<double>(epoch) + fraction;
            GroupRates r;
            r.head = cosine_warmup_lr(t, total, p2.warmup_epochs, p2.lr_head);
            if (!frozen) r.backbone = cosine_warmup_lr(t, total, p2.warmup_epochs, p2.lr_backbone);
            return r;
        };
        EpochRecord rec;
        rec.phase = "phase2";
        rec.epoch = epoch;
        rec.encoder_frozen = frozen;
        rec.train_loss = loop.run_epoch(model, opt, plan, draws, rates_at);
        const GroupRates end_rates = rates_at(0.0);
        rec.lr_head = *end_rates.head;
        rec.lr_backbone = end_rates.backbone.value_or(0.0);

        if (val != nullptr) {
            const double metric = metric_on(model, val_bags, *val);
            rec.val_metric = metric;
            if (stopper.update(metric)) {
                result.best = model;
                result.best_epoch = epoch;
                result.best_val_metric = metric;
            }
        } else {
            result.best = model;
            result.best_epoch = epoch;
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (val != nullptr && stopper.should_stop()) {
            result.stopped_early = epoch + 1 < p2.epochs;
            break;
        }
    }

    if (p2.swa_epochs > 0) {
        MilModel swa_model = result.best;
        AdamW swa_opt({0.9, 0.999, 1e-8, p2.weight_decay});
        std::vector<MilModel> snapshots;
        const GroupRates swa_rates{p2.swa_lr_scale * p2.lr_backbone, p2.swa_lr_scale * p2.lr_head};
        for (std::size_t e = 0; e < p2.swa_epochs; ++e) {
            const EpochPlan plan = scan_epoch(items, config, train.source_count, kSwaSampler + e);
            RngStream draws(config.seed, kSwaDraws + e);
            EpochRecord rec;
            rec.phase = "swa";
            rec.epoch = e;
            rec.train_loss = loop.run_epoch(swa_model, swa_opt, plan, draws, [&](double) { return swa_rates; });
            rec.lr_backbone = *swa_rates.backbone;
            rec.lr_head = *swa_rates.head;
            snapshots.push_back(swa_model);
            if (val != nullptr) rec.val_metric = metric_on(swa_model, val_bags, *val);
            result.history.push_back(rec);
            if (on_epoch) on_epoch(rec);
        }
        result.swa = swa_average(snapshots);
    }
    return result;
}

}  // namespace msmil
