#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "msmil/checkpoint.hpp"
#include "msmil/data_io.hpp"
#include "msmil/error.hpp"
#include "msmil/hash.hpp"
#include "msmil/scoring.hpp"
#include "msmil/train.hpp"

namespace msmil::cli {

namespace {

using ojson = nlohmann::ordered_json;

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const ojson& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void require_out(const GlobalOptions& g, const char* verb) {
    if (g.out.empty()) throw ValueError(std::string(verb) + ": --out is required");
}

// Output directory for verbs that write several files.
fs::path out_dir(const GlobalOptions& g, const char* verb) {
    require_out(g, verb);
    fs::create_directories(g.out);
    return g.out;
}

// Output file for verbs that write one primary file.
fs::path out_file(const GlobalOptions& g, const char* verb) {
    require_out(g, verb);
    if (g.out.has_parent_path()) fs::create_directories(g.out.parent_path());
    return g.out;
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
    return file.parent_path() / (file.stem().string() + suffix);
}

// Digest over every file in a directory, ordered by name.
std::string directory_digest(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += f.filename().string() + ':' + sha256_file(f) + '\n';
    return sha256_hex(acc);
}

TrainConfig load_config(const GlobalOptions& g, const char* verb) {
    if (g.config.empty()) throw ValueError(std::string(verb) + ": --config is required");
    TrainConfig c = train_config_from_json(read_json(g.config));
    if (g.seed) c.seed = *g.seed;
    return c;
}

ojson epoch_event(const EpochRecord& r) {
    ojson e;
    e["event"] = "epoch";
    e["phase"] = r.phase;
    e["epoch"] = r.epoch;
    e["train_loss"] = r.train_loss;
    e["lr_backbone"] = r.lr_backbone;
    e["lr_head"] = r.lr_head;
    e["encoder_frozen"] = r.encoder_frozen;
    e["val_metric"] = r.val_metric ? ojson(*r.val_metric) : ojson(nullptr);
    if (r.train_accuracy) e["train_accuracy"] = *r.train_accuracy;
    return e;
}

ScoreTable load_table(const std::vector<fs::path>& scores, const std::vector<double>& weights, int source_count,
                      RunManifest& manifest) {
    if (scores.empty()) throw ValueError("at least one --scores file is required");
    if (!weights.empty() && weights.size() != scores.size()) {
        throw ValueError("--weight must be given once per --scores file");
    }
    ScoreTable table;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ModelScores m = read_scores_csv(scores[i], scores[i].stem().string(), source_count);
        if (!weights.empty()) m.weight = weights[i];
        manifest.add_input("scores", scores[i]);
        table.add(std::move(m));
    }
    table.check_complete();
    return table;
}

std::vector<LabeledScore> labeled(const ModelScores& m, const Dataset& labels) {
    return attach_labels(m.rows, labels);
}

CalibrationResult sweep(std::span<const LabeledScore> scores, int source_count, ThresholdMode mode) {
    return mode == ThresholdMode::global ? sweep_global(scores, source_count)
                                         : sweep_per_source(scores, source_count);
}

// Fills missing member weights with that member's per-source calibrated score.
void default_weights(ScoreTable& table, const Dataset& labels, int source_count) {
    ScoreTable filled;
    for (ModelScores m : table.models()) {
        if (!m.weight) m.weight = sweep_per_source(labeled(m, labels), source_count).report.score;
        filled.add(std::move(m));
    }
    table = std::move(filled);
}

}  // namespace

RunManifest::RunManifest(std::string command, const GlobalOptions& globals)
    : command_(std::move(command)),
      seed_(globals.seed),
      threads_(globals.threads),
      start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::string& role, const fs::path& path) {
    ojson e;
    e["role"] = role;
    e["path"] = path.string();
    e["sha256"] = fs::is_directory(path) ? directory_digest(path) : sha256_file(path);
    inputs_.push_back(std::move(e));
}

void RunManifest::add_output(const fs::path& path) { outputs_.push_back(path); }

void RunManifest::write(const fs::path& path) {
    ojson j;
    j["schema_version"] = 1;
    j["command"] = command_;
    j["seed"] = seed_ ? ojson(*seed_) : ojson(nullptr);
    j["threads"] = threads_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    ojson outputs = ojson::array();
    for (const auto& p : outputs_) outputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["outputs"] = std::move(outputs);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
    j["timings"] = {{"wall_seconds", elapsed.count()}};
    write_json(path, j);
}

EventLog::EventLog(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot write " + path.string());
}

void EventLog::emit(const ojson& event) {
    out_ << event.dump() << '\n';
    out_.flush();
}

DataInfo read_data_info(const fs::path& root) {
    DataInfo info;
    const fs::path path = root / "dataset.json";
    if (!fs::exists(path)) return info;
    const auto j = read_json(path);
    try {
        info.source_count = j.at("source_count").get<int>();
        info.d_in = j.at("d_in").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return info;
}

Dataset load_split(const fs::path& root, Split split) {
    return load_bags(root / to_string(split), split, read_data_info(root).source_count);
}

fs::path metadata_path(const fs::path& root, Split split) { return root / (to_string(split) + "_metadata.csv"); }

ojson cmd_gen_data(const GlobalOptions& g, const GenDataOptions& o) {
    const fs::path root = out_dir(g, "gen-data");
    RunManifest manifest("gen-data", g);
    const ShiftSpec spec = load_shift_spec(o.spec);
    manifest.add_input("spec", o.spec);
    const std::uint64_t seed = g.seed.value_or(0);
    manifest.set_seed(seed);
    manifest.set_config(to_json(spec));

    ojson info;
    info["schema_version"] = 1;
    info["seed"] = seed;
    info["source_count"] = spec.sources.size();
    info["d_in"] = spec.d_in;
    ojson splits;
    for (Split split : {Split::train, Split::val, Split::test}) {
        const Dataset ds = generate_synthetic(spec, seed, split);
        write_dataset(root, ds);
        ojson per_source = ojson::array();
        for (std::size_t s = 0; s < spec.sources.size(); ++s) {
            const SplitCounts& c = spec.counts(s, split);
            per_source.push_back({{"covid", c.covid}, {"noncovid", c.noncovid}});
        }
        splits[to_string(split)] = {{"scans", ds.bags.size()}, {"per_source", per_source}};
        manifest.add_output(metadata_path(root, split));
        for (const auto& bag : ds.bags) {
            manifest.add_output(root / to_string(split) / (bag.scan_id + ".bin"));
            manifest.add_output(root / to_string(split) / (bag.scan_id + ".json"));
        }
    }
    info["splits"] = splits;
    write_json(root / "dataset.json", info);
    manifest.add_output(root / "dataset.json");
    manifest.write(root / "run_manifest.json");
    return info;
}

ojson cmd_pretrain(const GlobalOptions& g, const PretrainOptions& o) {
    const fs::path root = out_dir(g, "pretrain");
    RunManifest manifest("pretrain", g);
    const TrainConfig config = load_config(g, "pretrain");
    manifest.set_seed(config.seed);
    manifest.set_config(to_json(config));
    manifest.add_input("config", g.config);
    const Dataset train = load_split(o.data, Split::train);
    manifest.add_input("train", o.data / "train");

    EventLog log(root / "events.jsonl");
    const Phase1Result r = train_phase1(train, config, [&](const EpochRecord& rec) { log.emit(epoch_event(rec)); });
    for (const auto& w : r.warnings) log.emit({{"event", "warning"}, {"message", w}});

    ojson summary;
    summary["train_slice_accuracy"] = slice_accuracy(r.model, train, config.phase1.max_slices_per_scan);
    if (fs::is_directory(o.data / "val")) {
        const Dataset val = load_split(o.data, Split::val);
        manifest.add_input("val", o.data / "val");
        if (!val.bags.empty()) {
            summary["val_slice_accuracy"] = slice_accuracy(r.model, val, config.phase1.max_slices_per_scan);
        }
    }
    log.emit({{"event", "done"}, {"summary", summary}});

    const fs::path ckpt = root / "slice_model.json";
    save_checkpoint(ckpt, r.model, {"phase1", config.seed, to_json(config)});
    manifest.add_output(ckpt);
    manifest.add_output(sibling(ckpt, ".bin"));
    manifest.add_output(root / "events.jsonl");
    manifest.write(root / "run_manifest.json");
    summary["checkpoint"] = ckpt.string();
    return summary;
}

ojson cmd_train_mil(const GlobalOptions& g, const TrainMilOptions& o) {
    const fs::path root = out_dir(g, "train-mil");
    RunManifest manifest("train-mil", g);
    const TrainConfig config = load_config(g, "train-mil");
    manifest.set_seed(config.seed);
    manifest.set_config(to_json(config));
    manifest.add_input("config", g.config);
    const Dataset train = load_split(o.data, Split::train);
    manifest.add_input("train", o.data / "train");
    std::optional<Dataset> val;
    if (fs::is_directory(o.data / "val")) {
        val = load_split(o.data, Split::val);
        manifest.add_input("val", o.data / "val");
        if (val->bags.empty()) val.reset();
    }

    Encoder encoder;
    if (o.encoder) {
        encoder = load_slice_checkpoint(*o.encoder).encoder;
        manifest.add_input("encoder", *o.encoder);
        manifest.add_input("encoder_blob", sibling(*o.encoder, ".bin"));
    } else {
        RngStream rng(config.seed, 31);
        encoder = init_encoder(train.bags.front().dim(), config.dims.encoder_hidden, config.dims.embed_dim, rng);
    }

    EventLog log(root / "events.jsonl");
    const Phase2Result r = train_phase2(train, val ? &*val : nullptr, encoder, config,
                                        [&](const EpochRecord& rec) { log.emit(epoch_event(rec)); });

    ojson summary;
    summary["best_epoch"] = r.best_epoch;
    summary["stopped_early"] = r.stopped_early;
    if (val) {
        summary["best_val_metric"] = r.best_val_metric;
        if (r.swa) summary["swa_val_metric"] = validation_metric(*r.swa, *val, config.phase2.k_eval);
    }
    log.emit({{"event", "done"}, {"summary", summary}});

    const auto save = [&](const std::string& name, const MilModel& m, const std::string& phase) {
        const fs::path ckpt = root / name;
        save_checkpoint(ckpt, m, {phase, config.seed, to_json(config)});
        manifest.add_output(ckpt);
        manifest.add_output(sibling(ckpt, ".bin"));
        return ckpt.string();
    };
    summary["checkpoint"] = save("mil_best.json", r.best, "phase2");
    if (r.swa) summary["swa_checkpoint"] = save("mil_swa.json", *r.swa, "swa");
    manifest.add_output(root / "events.jsonl");
    manifest.write(root / "run_manifest.json");
    return summary;
}

ojson cmd_score(const GlobalOptions& g, const ScoreOptions& o) {
    const fs::path root = out_dir(g, "score");
    if (o.models.empty()) throw ValueError("score: at least one --model is required");
    RunManifest manifest("score", g);
    const Dataset data = load_split(o.data, o.split);
    manifest.add_input(to_string(o.split), o.data / to_string(o.split));
    for (const auto& m : o.models) {
        manifest.add_input("model", m);
        manifest.add_input("model_blob", sibling(m, ".bin"));
    }
    std::vector<std::string> ids;
    for (const auto& m : o.models) {
        ids.push_back(m.stem().string());
        if (std::count(ids.begin(), ids.end(), ids.back()) > 1) {
            throw ValueError("score: two models share the id '" + ids.back() + "'");
        }
    }

    // One worker per model, at most --threads at a time.
    std::vector<std::vector<ScoreRow>> results(o.models.size());
    std::vector<std::exception_ptr> errors(o.models.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < o.models.size(); i = next++) {
            try {
                const fs::path& path = o.models[i];
                std::vector<ScoreRow>& rows = results[i];
                if (checkpoint_kind(path) == ModelKind::slice) {
                    const SliceModel model = load_slice_checkpoint(path);
                    for (const auto& bag : data.bags) {
                        rows.push_back({bag.scan_id, bag.source, slice_model_score(model, bag.slices)});
                    }
                } else {
                    const MilModel model = load_mil_checkpoint(path);
                    std::size_t k = Phase2Config{}.k_eval;
                    const auto meta = read_checkpoint_manifest(path);
                    if (const auto c = meta.find("config"); c != meta.end() && c->contains("phase2")) {
                        k = (*c)["phase2"].value("k_eval", k);
                    }
                    if (o.k_eval) k = *o.k_eval;
                    for (const auto& bag : data.bags) {
                        rows.push_back({bag.scan_id, bag.source, mil_score(model, bag.slices, k)});
                    }
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(g.threads, 1, o.models.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    ojson summary;
    summary["split"] = to_string(o.split);
    summary["scans"] = data.bags.size();
    ojson files = ojson::array();
    for (std::size_t i = 0; i < o.models.size(); ++i) {
        const fs::path csv = root / (ids[i] + ".csv");
        write_scores_csv(csv, results[i]);
        manifest.add_output(csv);
        files.push_back(csv.string());
    }
    summary["scores"] = files;
    manifest.write(root / "run_manifest.json");
    return summary;
}

ojson cmd_fuse(const GlobalOptions& g, const FuseOptions& o) {
    const fs::path out = out_file(g, "fuse");
    RunManifest manifest("fuse", g);
    FuseOptions opts = o;
    if (o.manifest) {
        manifest.add_input("ensemble", *o.manifest);
        const auto em = EnsembleManifest::from_json(read_json(*o.manifest));
        opts.rule = em.rule;
        opts.scores.clear();
        opts.weights.clear();
        const bool weighted = std::all_of(em.members.begin(), em.members.end(), [](const auto& m) { return m.weight; });
        for (const auto& m : em.members) {
            opts.scores.push_back(o.manifest->parent_path() / m.scores);
            if (weighted) opts.weights.push_back(*m.weight);
        }
    }
    ScoreTable table = load_table(opts.scores, opts.weights, opts.source_count, manifest);

    EnsembleManifest em;
    em.rule = opts.rule;
    for (std::size_t i = 0; i < table.model_count(); ++i) {
        em.members.push_back({table.models()[i].model_id, fs::absolute(opts.scores[i]).string(), table.models()[i].weight});
    }

    ojson summary;
    summary["rule"] = to_string(opts.rule);
    summary["models"] = table.model_count();
    if (opts.rule == FusionRule::majority) {
        std::vector<ThresholdMap> maps;
        if (opts.thresholds.empty()) {
            maps.assign(table.model_count(), ThresholdMap{});
        } else {
            if (opts.thresholds.size() != table.model_count()) {
                throw ValueError("fuse: --thresholds must be given once per --scores file");
            }
            for (const auto& p : opts.thresholds) {
                maps.push_back(threshold_map_from_json(read_json(p)));
                manifest.add_input("thresholds", p);
            }
        }
        std::vector<std::pair<std::string, int>> preds;
        for (const auto& v : fuse_majority(table, maps)) preds.emplace_back(v.scan_id, v.label);
        write_predictions_csv(out, preds);
        summary["predictions"] = out.string();
    } else {
        write_scores_csv(out, opts.rule == FusionRule::uniform ? fuse_uniform(table) : fuse_weighted(table));
        summary["scores"] = out.string();
    }
    manifest.add_output(out);
    const fs::path em_path = sibling(out, ".ensemble.json");
    write_json(em_path, em.to_json());
    manifest.add_output(em_path);
    manifest.write(sibling(out, ".manifest.json"));
    return summary;
}

ojson cmd_calibrate(const GlobalOptions& g, const CalibrateOptions& o) {
    const fs::path out = out_file(g, "calibrate");
    RunManifest manifest("calibrate", g);
    const ModelScores scores = read_scores_csv(o.scores, o.scores.stem().string(), o.source_count);
    const Dataset labels = load_metadata_csv(o.labels, Split::val, o.source_count);
    manifest.add_input("scores", o.scores);
    manifest.add_input("labels", o.labels);
    const CalibrationResult r = sweep(labeled(scores, labels), o.source_count, o.mode);
    write_json(out, r.to_json());
    manifest.add_output(out);
    manifest.write(sibling(out, ".manifest.json"));
    ojson summary;
    summary["mode"] = to_string(o.mode);
    summary["score"] = r.report.score;
    return summary;
}

ojson cmd_predict(const GlobalOptions& g, const PredictOptions& o) {
    const fs::path out = out_file(g, "predict");
    RunManifest manifest("predict", g);
    const ModelScores scores = read_scores_csv(o.scores, o.scores.stem().string(), o.source_count);
    const ThresholdMap map = threshold_map_from_json(read_json(o.thresholds));
    manifest.add_input("scores", o.scores);
    manifest.add_input("thresholds", o.thresholds);
    std::vector<std::pair<std::string, int>> preds;
    std::size_t positives = 0;
    for (const auto& row : scores.rows) {
        preds.emplace_back(row.scan_id, map.predict(row.source, row.prob));
        positives += static_cast<std::size_t>(preds.back().second);
    }
    write_predictions_csv(out, preds);
    manifest.add_output(out);
    manifest.write(sibling(out, ".manifest.json"));
    return {{"scans", preds.size()}, {"covid", positives}};
}

ojson cmd_evaluate(const GlobalOptions& g, const EvaluateOptions& o) {
    const fs::path out = out_file(g, "evaluate");
    RunManifest manifest("evaluate", g);
    const auto preds = read_predictions_csv(o.predictions);
    const Dataset labels = load_metadata_csv(o.labels, Split::val, o.source_count);
    manifest.add_input("predictions", o.predictions);
    manifest.add_input("labels", o.labels);
    if (preds.size() != labels.bags.size()) {
        throw ValueError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(labels.bags.size()) + " labelled scans");
    }
    std::vector<int> p, t;
    std::vector<SourceId> s;
    for (const auto& [id, label] : preds) {
        const ScanBag& bag = labels.find(id);
        p.push_back(label);
        t.push_back(*bag.label);
        s.push_back(bag.source);
    }
    const MetricReport report = challenge_metric(p, t, s, o.source_count);
    ojson j = report.to_json();
    write_json(out, j);
    manifest.add_output(out);
    manifest.write(sibling(out, ".manifest.json"));
    return j;
}

std::vector<AblationRow> ablation_table(const ScoreTable& input, const Dataset& labels, int source_count) {
    ScoreTable table = input;
    default_weights(table, labels, source_count);
    std::vector<AblationRow> rows;
    for (FusionRule rule : {FusionRule::uniform, FusionRule::weighted, FusionRule::majority}) {
        for (ThresholdMode mode : {ThresholdMode::global, ThresholdMode::per_source}) {
            double score = 0.0;
            if (rule == FusionRule::majority) {
                std::vector<ThresholdMap> maps;
                for (const auto& m : table.models()) maps.push_back(sweep(labeled(m, labels), source_count, mode).thresholds);
                std::vector<int> p, t;
                std::vector<SourceId> s;
                for (const auto& v : fuse_majority(table, maps)) {
                    p.push_back(v.label);
                    t.push_back(*labels.find(v.scan_id).label);
                    s.push_back(v.source);
                }
                score = challenge_metric(p, t, s, source_count).score;
            } else {
                const auto fused = rule == FusionRule::uniform ? fuse_uniform(table) : fuse_weighted(table);
                score = sweep(attach_labels(fused, labels), source_count, mode).report.score;
            }
            rows.push_back({rule, mode, score});
        }
    }
    return rows;
}

ojson cmd_ablation(const GlobalOptions& g, const AblationOptions& o) {
    const fs::path out = out_file(g, "ablation");
    RunManifest manifest("ablation", g);
    ScoreTable table = load_table(o.scores, o.weights, o.source_count, manifest);
    const Dataset labels = load_metadata_csv(o.labels, Split::val, o.source_count);
    manifest.add_input("labels", o.labels);
    default_weights(table, labels, o.source_count);

    ojson j;
    j["schema_version"] = 1;
    ojson members = ojson::array();
    for (const auto& m : table.models()) {
        const auto l = labeled(m, labels);
        members.push_back({{"model_id", m.model_id},
                           {"weight", *m.weight},
                           {"global", sweep_global(l, o.source_count).report.score},
                           {"per_source", sweep_per_source(l, o.source_count).report.score}});
    }
    j["members"] = members;
    ojson rows = ojson::array();
    const auto table_rows = ablation_table(table, labels, o.source_count);
    const auto best = std::max_element(table_rows.begin(), table_rows.end(),
                                       [](const auto& a, const auto& b) { return a.score < b.score; });
    for (const auto& r : table_rows) {
        rows.push_back({{"rule", to_string(r.rule)}, {"thresholds", to_string(r.mode)}, {"score", r.score}});
    }
    j["rows"] = rows;
    j["best"] = {{"rule", to_string(best->rule)}, {"thresholds", to_string(best->mode)}, {"score", best->score}};
    write_json(out, j);
    manifest.add_output(out);
    manifest.write(sibling(out, ".manifest.json"));
    return j;
}

}  // namespace msmil::cli
