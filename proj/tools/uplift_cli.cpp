#include "uplift/data.hpp"
#include "uplift/errors.hpp"
#include "uplift/experiment.hpp"
#include "uplift/metrics.hpp"
#include "uplift/model.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

namespace {

using namespace uplift;

struct GlobalOptions {
    int jobs = 1;
};

std::uint64_t parse_env_u64(const char* name) {
    const char* raw = std::getenv(name);
    if (!raw) return 0;
    try {
        return std::stoull(raw);
    } catch (const std::exception&) {
        throw ConfigError(std::string("environment variable ") + name +
                          " is not a valid integer: " + raw);
    }
}

// UPLIFT_SEED pins the seed of whatever the command is about to run
void apply_seed_override(ExperimentConfig& cfg) {
    if (std::getenv("UPLIFT_SEED")) {
        cfg.training.seeds = {parse_env_u64("UPLIFT_SEED")};
    }
}

int cmd_generate(const std::string& spec_path, const std::string& out_path,
                 const std::string& truth_path) {
    SyntheticSpec spec = synthetic_spec_from_json_file(spec_path);
    if (std::getenv("UPLIFT_SEED")) spec.seed = parse_env_u64("UPLIFT_SEED");
    const Dataset ds = generate_synthetic(spec);
    save_csv(ds, out_path);
    if (!truth_path.empty()) save_truth_csv(ds, truth_path);
    return 0;
}

ExperimentConfig load_config(const std::string& config_path, const std::string& data_override) {
    ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
    if (!data_override.empty()) {
        if (cfg.data.schema.columns.empty()) {
            throw ConfigError("config: data.schema is required when --data points at a CSV");
        }
        cfg.data.synthetic = false;
        cfg.data.csv_path = data_override;
    }
    apply_seed_override(cfg);
    return cfg;
}

int cmd_train(const GlobalOptions& opt, const std::string& config_path,
              const std::string& data_path, const std::string& ckpt_path,
              const std::string& report_path) {
    const ExperimentConfig cfg = load_config(config_path, data_path);
    const PreparedData data = prepare_data(cfg);
    const ProtocolResult result = run_protocol(cfg, data, opt.jobs);

    save_checkpoint(*result.first_model, ckpt_path);
    std::ofstream report(report_path);
    if (!report) throw DataError("cannot write " + report_path);
    report << result.to_json() << "\n";

    std::cerr << "trained " << model_kind_name(cfg.model.kind) << " on "
              << data.splits.train.size() << " samples, " << cfg.training.seeds.size()
              << " seed(s); aggregate mQini " << result.m_qini.mean << " +- "
              << result.m_qini.stddev << "\n";
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& out_dir, std::size_t grid_size, std::size_t num_bins) {
    auto model = load_checkpoint(ckpt_path);
    Dataset ds = load_csv(data_path, model->encoder().to_schema());
    align_categories(ds, model->encoder());
    model->encoder().to_standardizer().apply(ds);

    const int K = model->num_treatments();
    if (ds.num_treatments() > K) {
        throw DataError("data contains treatment labels up to " +
                        std::to_string(ds.num_treatments()) + ", checkpoint expects K=" +
                        std::to_string(K));
    }
    const UpliftPrediction pred = model->predict(ds.features);
    const EvaluationReport report = evaluate(pred, ds, grid_size, num_bins);
    for (std::size_t k = 0; k < report.curves.size(); ++k) {
        save_curve_csv(report.curves[k],
                       out_dir + "/qini_curve_" + std::to_string(k + 1) + ".csv");
    }
    std::cout << report.to_json() << "\n";
    return 0;
}

int cmd_search(const GlobalOptions& opt, const std::string& config_path,
               const std::string& data_path, const std::string& out_dir) {
    const ExperimentConfig cfg = load_config(config_path, data_path);
    const PreparedData data = prepare_data(cfg);
    const SearchResult result = hyper_search(cfg, data, opt.jobs);
    save_trials_csv(result, cfg.training.seeds, out_dir + "/trials.csv");

    const Trial& best = result.trials[result.best_index];
    nlohmann::json best_json;
    best_json["num_experts"] = best.num_experts;
    best_json["expert_hidden"] = best.expert_hidden;
    best_json["head_hidden"] = best.head_hidden;
    best_json["learning_rate"] = best.learning_rate;
    best_json["l2_lambda"] = best.l2_lambda;
    best_json["batch_size"] = best.batch_size;
    best_json["validation_objective"] = best.objective;
    std::ofstream best_out(out_dir + "/best_config.json");
    if (!best_out) throw DataError("cannot write " + out_dir + "/best_config.json");
    best_out << best_json.dump(2) << "\n";

    // test metrics are computed once, with the selected configuration
    const ProtocolResult final_result = run_protocol(result.best_config, data, opt.jobs);
    std::cout << final_result.to_json() << "\n";
    return 0;
}

int cmd_complexity(const std::string& config_path, const std::string& out_path) {
    const ExperimentConfig cfg = [&] {
        ExperimentConfig c = ExperimentConfig::from_json_file(config_path);
        apply_seed_override(c);
        return c;
    }();
    const PreparedData data = prepare_data(cfg);
    const auto rows = complexity_report(cfg, data);
    save_complexity_csv(rows, out_path);
    for (const auto& r : rows) {
        std::cerr << model_kind_name(r.kind) << ": " << r.param_count << " params, "
                  << r.train_seconds << " s\n";
    }
    return 0;
}

int cmd_sweep(const GlobalOptions& opt, const std::string& config_path,
              const std::string& out_path) {
    const ExperimentConfig cfg = [&] {
        ExperimentConfig c = ExperimentConfig::from_json_file(config_path);
        apply_seed_override(c);
        return c;
    }();
    const PreparedData data = prepare_data(cfg);
    const auto rows = expert_sweep(cfg, data, opt.jobs);
    save_sweep_csv(rows, out_path);

    double lo = rows.front().m_qini.mean, hi = lo;
    for (const auto& r : rows) {
        lo = std::min(lo, r.m_qini.mean);
        hi = std::max(hi, r.m_qini.mean);
    }
    std::cerr << "mQini spread across expert counts: " << (hi - lo) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uplift: multi-valued treatment uplift modeling toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions opt;
    if (std::getenv("UPLIFT_JOBS")) {
        opt.jobs = static_cast<int>(parse_env_u64("UPLIFT_JOBS"));
    }
    app.add_option("--jobs", opt.jobs, "max parallel runs across seeds/trials")
        ->check(CLI::PositiveNumber);

    std::string spec_path, out_path, truth_path;
    auto* generate = app.add_subcommand("generate", "write a synthetic randomized-experiment CSV");
    generate->add_option("--spec", spec_path, "synthetic spec JSON")->required();
    generate->add_option("--out", out_path, "output dataset CSV")->required();
    generate->add_option("--truth-out", truth_path, "output ground-truth uplift CSV");

    std::string config_path, data_path, ckpt_path, report_path = "report.json";
    auto* train_cmd = app.add_subcommand("train", "train a model over the configured seeds");
    train_cmd->add_option("--config", config_path, "experiment config JSON")->required();
    train_cmd->add_option("--data", data_path, "dataset CSV (overrides config data source)");
    train_cmd->add_option("--out", ckpt_path, "output checkpoint JSON")->required();
    train_cmd->add_option("--report", report_path, "output report JSON");

    std::string eval_ckpt, eval_data, eval_dir = ".";
    std::size_t grid_size = 100, num_bins = 10;
    auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint JSON")->required();
    eval_cmd->add_option("--data", eval_data, "dataset CSV")->required();
    eval_cmd->add_option("--out-dir", eval_dir, "directory for qini_curve_<k>.csv files");
    eval_cmd->add_option("--grid-size", grid_size, "qini curve grid size");
    eval_cmd->add_option("--num-bins", num_bins, "kendall bin count");

    std::string search_config, search_data, search_dir = ".";
    auto* search_cmd = app.add_subcommand("search", "random hyperparameter search");
    search_cmd->add_option("--config", search_config, "experiment config JSON")->required();
    search_cmd->add_option("--data", search_data, "dataset CSV (overrides config data source)");
    search_cmd->add_option("--out-dir", search_dir, "directory for trials.csv and best_config.json");

    std::string cx_config, cx_out = "complexity.csv";
    auto* cx_cmd = app.add_subcommand("complexity", "parameter count and train time per kind");
    cx_cmd->add_option("--config", cx_config, "experiment config JSON")->required();
    cx_cmd->add_option("--out", cx_out, "output CSV");

    std::string sweep_config, sweep_out = "sweep.csv";
    auto* sweep_cmd = app.add_subcommand("sweep", "expert-count sensitivity sweep");
    sweep_cmd->add_option("--config", sweep_config, "experiment config JSON")->required();
    sweep_cmd->add_option("--out", sweep_out, "output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) return cmd_generate(spec_path, out_path, truth_path);
        if (train_cmd->parsed()) return cmd_train(opt, config_path, data_path, ckpt_path, report_path);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_ckpt, eval_data, eval_dir, grid_size, num_bins);
        if (search_cmd->parsed()) return cmd_search(opt, search_config, search_data, search_dir);
        if (cx_cmd->parsed()) return cmd_complexity(cx_config, cx_out);
        if (sweep_cmd->parsed()) return cmd_sweep(opt, sweep_config, sweep_out);
    } catch (const uplift::TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
