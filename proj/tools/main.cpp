#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "msmil/error.hpp"

namespace {

using msmil::cli::GlobalOptions;
using ojson = nlohmann::ordered_json;

int fail(int code, const std::string& type, const std::string& message) {
    ojson err;
    err["error"] = {{"type", type}, {"message", message}};
    err["exit_code"] = code;
    std::cerr << err.dump() << '\n';
    return code;
}

const char* error_type(const msmil::Error& e) {
    if (dynamic_cast<const msmil::ShapeError*>(&e)) return "ShapeError";
    if (dynamic_cast<const msmil::ValueError*>(&e)) return "ValueError";
    if (dynamic_cast<const msmil::FormatError*>(&e)) return "FormatError";
    return "Error";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-source MIL training, scoring, fusion and threshold calibration"};
    app.require_subcommand(1);

    GlobalOptions g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
    app.add_option("--threads", g.threads, "Worker threads for scoring")->check(CLI::PositiveNumber);
    app.add_option("--config", g.config, "Training config JSON");
    app.add_option("--out", g.out, "Output directory or file");
    app.fallthrough();

    int sources = 4;
    const auto with_sources = [&](CLI::App* sub) {
        sub->add_option("--sources", sources, "Number of sources")->check(CLI::PositiveNumber);
    };

    msmil::cli::GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic multi-source dataset");
    gen_cmd->add_option("--spec", gen.spec, "Data spec JSON")->required()->check(CLI::ExistingFile);

    msmil::cli::PretrainOptions pre;
    auto* pre_cmd = app.add_subcommand("pretrain", "Phase 1: slice-level pretraining");
    pre_cmd->add_option("--data", pre.data, "Dataset root")->required()->check(CLI::ExistingDirectory);

    msmil::cli::TrainMilOptions mil;
    std::string encoder;
    auto* mil_cmd = app.add_subcommand("train-mil", "Phase 2: attention MIL training");
    mil_cmd->add_option("--data", mil.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
    mil_cmd->add_option("--encoder", encoder, "Phase-1 checkpoint")->check(CLI::ExistingFile);

    msmil::cli::ScoreOptions score;
    std::string split = "val";
    std::size_t k_eval = 0;
    auto* score_cmd = app.add_subcommand("score", "Score a split with one or more checkpoints");
    score_cmd->add_option("--model", score.models, "Checkpoint manifest (repeatable)")->required();
    score_cmd->add_option("--data", score.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
    score_cmd->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* k_opt = score_cmd->add_option("--k-eval", k_eval, "Slices per scan for MIL models")->check(CLI::PositiveNumber);

    msmil::cli::FuseOptions fuse;
    std::string rule = "weighted";
    std::string ensemble;
    auto* fuse_cmd = app.add_subcommand("fuse", "Fuse per-model score files");
    fuse_cmd->add_option("--scores", fuse.scores, "Score CSV (repeatable)");
    fuse_cmd->add_option("--rule", rule, "uniform, weighted or majority")
        ->check(CLI::IsMember({"uniform", "weighted", "majority"}));
    fuse_cmd->add_option("--weight", fuse.weights, "Validation score per model (repeatable)");
    fuse_cmd->add_option("--thresholds", fuse.thresholds, "Calibration JSON per model for majority voting");
    fuse_cmd->add_option("--manifest", ensemble, "Ensemble manifest JSON")->check(CLI::ExistingFile);
    with_sources(fuse_cmd);

    msmil::cli::CalibrateOptions cal;
    std::string mode = "per_source";
    auto* cal_cmd = app.add_subcommand("calibrate", "Sweep decision thresholds on labelled scores");
    cal_cmd->add_option("--scores", cal.scores, "Score CSV")->required()->check(CLI::ExistingFile);
    cal_cmd->add_option("--labels", cal.labels, "Metadata CSV with labels")->required()->check(CLI::ExistingFile);
    cal_cmd->add_option("--mode", mode, "global or per_source")->check(CLI::IsMember({"global", "per_source"}));
    with_sources(cal_cmd);

    msmil::cli::PredictOptions pred;
    auto* pred_cmd = app.add_subcommand("predict", "Apply calibrated thresholds to scores");
    pred_cmd->add_option("--scores", pred.scores, "Score CSV")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--thresholds", pred.thresholds, "Calibration JSON")->required()->check(CLI::ExistingFile);
    with_sources(pred_cmd);

    msmil::cli::EvaluateOptions eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "Challenge metric of hard predictions");
    eval_cmd->add_option("--predictions", eval.predictions, "Predictions CSV")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--labels", eval.labels, "Metadata CSV with labels")->required()->check(CLI::ExistingFile);
    with_sources(eval_cmd);

    msmil::cli::AblationOptions abl;
    auto* abl_cmd = app.add_subcommand("ablation", "Compare fusion rules and threshold modes");
    abl_cmd->add_option("--scores", abl.scores, "Score CSV (repeatable)")->required();
    abl_cmd->add_option("--labels", abl.labels, "Metadata CSV with labels")->required()->check(CLI::ExistingFile);
    abl_cmd->add_option("--weight", abl.weights, "Validation score per model (repeatable)");
    with_sources(abl_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(1, "UsageError", e.what());
    }
    if (*seed_opt) g.seed = seed;

    try {
        ojson result;
        if (*gen_cmd) {
            result = msmil::cli::cmd_gen_data(g, gen);
        } else if (*pre_cmd) {
            result = msmil::cli::cmd_pretrain(g, pre);
        } else if (*mil_cmd) {
            if (!encoder.empty()) mil.encoder = encoder;
            result = msmil::cli::cmd_train_mil(g, mil);
        } else if (*score_cmd) {
            score.split = msmil::parse_split(split);
            if (*k_opt) score.k_eval = k_eval;
            result = msmil::cli::cmd_score(g, score);
        } else if (*fuse_cmd) {
            fuse.rule = msmil::parse_fusion_rule(rule);
            if (!ensemble.empty()) fuse.manifest = ensemble;
            fuse.source_count = sources;
            result = msmil::cli::cmd_fuse(g, fuse);
        } else if (*cal_cmd) {
            cal.mode = msmil::parse_threshold_mode(mode);
            cal.source_count = sources;
            result = msmil::cli::cmd_calibrate(g, cal);
        } else if (*pred_cmd) {
            pred.source_count = sources;
            result = msmil::cli::cmd_predict(g, pred);
        } else if (*eval_cmd) {
            eval.source_count = sources;
            result = msmil::cli::cmd_evaluate(g, eval);
        } else if (*abl_cmd) {
            abl.source_count = sources;
            result = msmil::cli::cmd_ablation(g, abl);
        }
        std::cout << result.dump(2) << '\n';
        return 0;
    } catch (const msmil::Error& e) {
        return fail(1, error_type(e), e.what());
    } catch (const std::exception& e) {
        return fail(2, "InternalError", e.what());
    }
}
