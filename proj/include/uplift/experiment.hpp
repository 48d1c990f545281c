#pragma once

#include "uplift/data.hpp"
#include "uplift/metrics.hpp"
#include "uplift/model.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace uplift {

struct TrainingConfig {
    int epochs = 30;
    std::size_t batch_size = 256;
    double learning_rate = 1e-3;
    int patience = 5; // 0 disables validation scoring and early stopping
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string objective = "mQini"; // or "mKendall"

    void validate() const;
};

struct MetricSettings {
    std::size_t grid_size = 100;
    std::size_t num_bins = 10;
};

struct DataSourceConfig {
    bool synthetic = false;
    SyntheticSpec synthetic_spec;
    std::string csv_path;
    DatasetSchema schema;
};

struct SplitConfig {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
    std::uint64_t seed = 17;
};

// Candidate values per hyperparameter; an empty list keeps the base value.
struct SearchSpace {
    std::vector<std::size_t> num_experts;
    std::vector<double> learning_rate;
    std::vector<double> l2_lambda;
    std::vector<std::size_t> batch_size;
    std::vector<std::vector<std::size_t>> expert_hidden;
    std::vector<std::vector<std::size_t>> head_hidden;

    std::size_t combination_count() const;
};

struct ExperimentConfig {
    M3TNConfig model;
    TrainingConfig training;
    DataSourceConfig data;
    SplitConfig split;
    MetricSettings metrics;

    SearchSpace search_space;
    std::size_t search_budget = 8;
    std::uint64_t search_seed = 0;

    std::vector<std::size_t> sweep_expert_counts = {1, 2, 4, 8};

    std::vector<ModelKind> complexity_kinds = {
        ModelKind::M3TN, ModelKind::SharedBottomMultiHead, ModelKind::TLearner};
    int complexity_epochs = 20;

    static ExperimentConfig from_json_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);
};

SyntheticSpec synthetic_spec_from_json_file(const std::string& path);

// Standardized splits plus the feature-encoding spec fitted on train.
struct PreparedData {
    SplitResult splits;
    EncoderSpec encoder;
    int num_treatments = 0;
};

PreparedData prepare_data(const ExperimentConfig& config);

struct RunResult {
    std::uint64_t seed = 0;
    EvaluationReport test_report;
    std::vector<double> loss_trace; // mean minibatch loss per epoch
    double wall_seconds = 0.0;      // training loop only, evaluation excluded
    std::size_t param_count = 0;
    double best_validation = 0.0;
    bool has_validation = false;
};

struct TrainOutcome {
    std::unique_ptr<UpliftModel> model;
    RunResult result; // test_report left empty; filled by the caller
};

// Mini-batch Adam on the masked loss; seeded shuffle per epoch; early
// stopping on the validation objective with best-epoch parameters restored.
TrainOutcome train(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed);

struct ProtocolAggregate {
    double mean = 0.0;
    double stddev = 0.0; // sample std over seeds
};

struct ProtocolResult {
    std::vector<RunResult> runs;
    ProtocolAggregate m_qini;
    ProtocolAggregate sd_qini;
    ProtocolAggregate m_kendall;
    ProtocolAggregate sd_kendall;
    std::unique_ptr<UpliftModel> first_model; // trained with seeds[0]

    // deterministic document: metrics, traces and sizes, no wall-clock
    std::string to_json() const;
};

// Independent train + test evaluation per seed, mean +- std aggregation.
// Seeds run in parallel when jobs > 1; results are ordered by seed index.
ProtocolResult run_protocol(const ExperimentConfig& config, const PreparedData& data,
                            int jobs = 1);

struct Trial {
    std::size_t index = 0;
    std::size_t num_experts = 0;
    std::vector<std::size_t> expert_hidden;
    std::vector<std::size_t> head_hidden;
    double learning_rate = 0.0;
    double l2_lambda = 0.0;
    std::size_t batch_size = 0;
    std::vector<double> per_seed; // best validation objective per seed
    double objective = 0.0;       // mean over seeds
};

struct SearchResult {
    std::vector<Trial> trials;
    std::size_t best_index = 0;
    ExperimentConfig best_config;
};

// Seeded random search over the finite space, without replacement. Scores
// trials on the validation slice only; the test slice is never touched.
SearchResult hyper_search(const ExperimentConfig& config, const PreparedData& data, int jobs = 1);

void save_trials_csv(const SearchResult& result, const std::vector<std::uint64_t>& seeds,
                     const std::string& path);

struct ComplexityRow {
    ModelKind kind;
    std::size_t param_count = 0;
    double train_seconds = 0.0;
};

// Fixed-epoch training per kind at shared widths; evaluation time excluded.
std::vector<ComplexityRow> complexity_report(const ExperimentConfig& config,
                                             const PreparedData& data);

void save_complexity_csv(const std::vector<ComplexityRow>& rows, const std::string& path);

struct SweepRow {
    std::size_t num_experts = 0;
    ProtocolAggregate m_qini;
    ProtocolAggregate sd_qini;
    ProtocolAggregate m_kendall;
    ProtocolAggregate sd_kendall;
};

// run_protocol per expert count, everything else fixed.
std::vector<SweepRow> expert_sweep(const ExperimentConfig& config, const PreparedData& data,
                                   int jobs = 1);

void save_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

} // namespace uplift
