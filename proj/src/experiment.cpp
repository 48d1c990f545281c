#include "uplift/experiment.hpp"

#include "uplift/errors.hpp"
#include "uplift/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace uplift {

void TrainingConfig::validate() const {
    if (epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("training.learning_rate must be a finite nonnegative number");
    }
    if (patience < 0) throw ConfigError("training.patience must be >= 0");
    if (seeds.empty()) throw ConfigError("training.seeds must contain at least one seed");
    if (objective != "mQini" && objective != "mKendall") {
        throw ConfigError("training.objective must be 'mQini' or 'mKendall', got '" + objective +
                          "'");
    }
}

std::size_t SearchSpace::combination_count() const {
    auto dim = [](std::size_t n) { return std::max<std::size_t>(1, n); };
    return dim(num_experts.size()) * dim(learning_rate.size()) * dim(l2_lambda.size()) *
           dim(batch_size.size()) * dim(expert_hidden.size()) * dim(head_hidden.size());
}

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

template <typename T>
T jget(const json& j, const std::string& field) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: field " + field + " has the wrong type");
    }
}

const json* jfind(const json& j, const char* key) {
    const auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

void parse_model(const json& j, M3TNConfig& m) {
    if (const json* v = jfind(j, "kind")) m.kind = model_kind_from_name(jget<std::string>(*v, "model.kind"));
    if (const json* v = jfind(j, "num_experts")) m.num_experts = jget<std::size_t>(*v, "model.num_experts");
    if (const json* v = jfind(j, "expert_hidden"))
        m.expert_hidden = jget<std::vector<std::size_t>>(*v, "model.expert_hidden");
    if (const json* v = jfind(j, "head_hidden"))
        m.head_hidden = jget<std::vector<std::size_t>>(*v, "model.head_hidden");
    if (const json* v = jfind(j, "l2_lambda")) m.l2_lambda = jget<double>(*v, "model.l2_lambda");
    if (const json* v = jfind(j, "l2_squared")) m.l2_squared = jget<bool>(*v, "model.l2_squared");
    if (const json* v = jfind(j, "mmd_alpha")) m.mmd_alpha = jget<double>(*v, "model.mmd_alpha");
    if (const json* v = jfind(j, "embedding_dims"))
        m.embedding_dims = jget<std::map<std::string, std::size_t>>(*v, "model.embedding_dims");
}

void parse_training(const json& j, TrainingConfig& t) {
    if (const json* v = jfind(j, "epochs")) t.epochs = jget<int>(*v, "training.epochs");
    if (const json* v = jfind(j, "batch_size")) t.batch_size = jget<std::size_t>(*v, "training.batch_size");
    if (const json* v = jfind(j, "learning_rate")) t.learning_rate = jget<double>(*v, "training.learning_rate");
    if (const json* v = jfind(j, "patience")) t.patience = jget<int>(*v, "training.patience");
    if (const json* v = jfind(j, "seeds")) t.seeds = jget<std::vector<std::uint64_t>>(*v, "training.seeds");
    if (const json* v = jfind(j, "objective")) t.objective = jget<std::string>(*v, "training.objective");
}

void parse_synthetic(const json& j, SyntheticSpec& s) {
    if (const json* v = jfind(j, "n")) s.n = jget<std::size_t>(*v, "data.synthetic.n");
    if (const json* v = jfind(j, "d")) s.d = jget<std::size_t>(*v, "data.synthetic.d");
    if (const json* v = jfind(j, "num_treatments"))
        s.num_treatments = jget<int>(*v, "data.synthetic.num_treatments");
    if (const json* v = jfind(j, "propensities"))
        s.propensities = jget<std::vector<double>>(*v, "data.synthetic.propensities");
    if (const json* v = jfind(j, "noise_std")) s.noise_std = jget<double>(*v, "data.synthetic.noise_std");
    if (const json* v = jfind(j, "seed")) s.seed = jget<std::uint64_t>(*v, "data.synthetic.seed");
    if (const json* v = jfind(j, "uplift")) {
        const std::string name = jget<std::string>(*v, "data.synthetic.uplift");
        if (name == "LinearSigmoid") s.uplift = UpliftFamily::LinearSigmoid;
        else if (name == "Piecewise") s.uplift = UpliftFamily::Piecewise;
        else throw ConfigError("config: data.synthetic.uplift must be 'LinearSigmoid' or 'Piecewise'");
    }
    if (s.propensities.empty()) {
        s.propensities.assign(static_cast<std::size_t>(s.num_treatments) + 1,
                              1.0 / static_cast<double>(s.num_treatments + 1));
    }
}

DatasetSchema parse_schema(const json& j) {
    DatasetSchema schema;
    if (!j.is_array()) throw ConfigError("config: data.schema must be an array of columns");
    for (const auto& cj : j) {
        SchemaColumn col;
        if (const json* v = jfind(cj, "name")) col.name = jget<std::string>(*v, "data.schema[].name");
        else throw ConfigError("config: data.schema[].name is required");
        if (const json* v = jfind(cj, "kind"))
            col.kind = column_kind_from_name(jget<std::string>(*v, "data.schema[].kind"));
        else throw ConfigError("config: data.schema[].kind is required");
        schema.columns.push_back(std::move(col));
    }
    schema.validate();
    return schema;
}

void parse_data(const json& j, DataSourceConfig& d) {
    const json* synthetic = jfind(j, "synthetic");
    const json* csv = jfind(j, "csv");
    if ((synthetic != nullptr) == (csv != nullptr)) {
        throw ConfigError("config: data must contain exactly one of 'synthetic' or 'csv'");
    }
    if (synthetic) {
        d.synthetic = true;
        parse_synthetic(*synthetic, d.synthetic_spec);
    } else {
        d.synthetic = false;
        d.csv_path = jget<std::string>(*csv, "data.csv");
        if (const json* v = jfind(j, "schema")) d.schema = parse_schema(*v);
        else throw ConfigError("config: data.schema is required with data.csv");
    }
}

void parse_split(const json& j, SplitConfig& s) {
    if (const json* v = jfind(j, "train")) s.train = jget<double>(*v, "split.train");
    if (const json* v = jfind(j, "val")) s.val = jget<double>(*v, "split.val");
    if (const json* v = jfind(j, "test")) s.test = jget<double>(*v, "split.test");
    if (const json* v = jfind(j, "seed")) s.seed = jget<std::uint64_t>(*v, "split.seed");
}

void parse_metrics(const json& j, MetricSettings& m) {
    if (const json* v = jfind(j, "grid_size")) m.grid_size = jget<std::size_t>(*v, "metrics.grid_size");
    if (const json* v = jfind(j, "num_bins")) m.num_bins = jget<std::size_t>(*v, "metrics.num_bins");
}

void parse_search(const json& j, ExperimentConfig& cfg) {
    if (const json* v = jfind(j, "budget")) cfg.search_budget = jget<std::size_t>(*v, "search.budget");
    if (const json* v = jfind(j, "seed")) cfg.search_seed = jget<std::uint64_t>(*v, "search.seed");
    if (const json* space = jfind(j, "space")) {
        SearchSpace& s = cfg.search_space;
        if (const json* v = jfind(*space, "num_experts"))
            s.num_experts = jget<std::vector<std::size_t>>(*v, "search.space.num_experts");
        if (const json* v = jfind(*space, "learning_rate"))
            s.learning_rate = jget<std::vector<double>>(*v, "search.space.learning_rate");
        if (const json* v = jfind(*space, "l2_lambda"))
            s.l2_lambda = jget<std::vector<double>>(*v, "search.space.l2_lambda");
        if (const json* v = jfind(*space, "batch_size"))
            s.batch_size = jget<std::vector<std::size_t>>(*v, "search.space.batch_size");
        if (const json* v = jfind(*space, "expert_hidden"))
            s.expert_hidden = jget<std::vector<std::vector<std::size_t>>>(*v, "search.space.expert_hidden");
        if (const json* v = jfind(*space, "head_hidden"))
            s.head_hidden = jget<std::vector<std::vector<std::size_t>>>(*v, "search.space.head_hidden");
    }
}

} // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    if (const json* v = jfind(doc, "model")) parse_model(*v, cfg.model);
    if (const json* v = jfind(doc, "training")) parse_training(*v, cfg.training);
    if (const json* v = jfind(doc, "data")) parse_data(*v, cfg.data);
    else throw ConfigError("config: data section is required");
    if (const json* v = jfind(doc, "split")) parse_split(*v, cfg.split);
    if (const json* v = jfind(doc, "metrics")) parse_metrics(*v, cfg.metrics);
    if (const json* v = jfind(doc, "search")) parse_search(*v, cfg);
    if (const json* v = jfind(doc, "sweep")) {
        if (const json* c = jfind(*v, "expert_counts"))
            cfg.sweep_expert_counts = jget<std::vector<std::size_t>>(*c, "sweep.expert_counts");
    }
    if (const json* v = jfind(doc, "complexity")) {
        if (const json* kinds = jfind(*v, "kinds")) {
            cfg.complexity_kinds.clear();
            for (const auto& kj : *kinds) {
                cfg.complexity_kinds.push_back(
                    model_kind_from_name(jget<std::string>(kj, "complexity.kinds[]")));
            }
        }
        if (const json* e = jfind(*v, "epochs"))
            cfg.complexity_epochs = jget<int>(*e, "complexity.epochs");
    }
    cfg.training.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

SyntheticSpec synthetic_spec_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("spec: cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("spec: invalid JSON: ") + e.what());
    }
    SyntheticSpec spec;
    parse_synthetic(doc, spec);
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// data preparation
// ---------------------------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& config) {
    Dataset full = config.data.synthetic ? generate_synthetic(config.data.synthetic_spec)
                                         : load_csv(config.data.csv_path, config.data.schema);
    const int K = full.num_treatments();
    if (K < 2) {
        throw DataError("dataset has K=" + std::to_string(K) +
                        " treatment arms; multi-valued treatment needs K >= 2");
    }
    PreparedData data;
    data.num_treatments = K;
    data.splits = split(full, config.split.train, config.split.val, config.split.test,
                        config.split.seed);

    const Standardizer stats = Standardizer::fit(data.splits.train);
    stats.apply(data.splits.train);
    stats.apply(data.splits.val);
    stats.apply(data.splits.test);

    data.encoder = EncoderSpec::build(data.splits.train, stats, config.model);
    if (!config.data.synthetic) {
        for (const auto& col : config.data.schema.columns) {
            if (col.kind == ColumnKind::Treatment) data.encoder.treatment_name = col.name;
            if (col.kind == ColumnKind::Response) data.encoder.response_name = col.name;
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

double validation_objective(const UpliftModel& model, const Dataset& val,
                            const ExperimentConfig& cfg) {
    const UpliftPrediction pred = model.predict(val.features);
    return cfg.training.objective == "mKendall"
               ? mean_kendall(pred, val, cfg.metrics.num_bins)
               : mean_qini(pred, val, cfg.metrics.grid_size);
}

std::vector<Matrix> snapshot_params(const std::vector<ParamRef>& params) {
    std::vector<Matrix> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(*p.value);
    return out;
}

void restore_params(const std::vector<ParamRef>& params, const std::vector<Matrix>& snapshot) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = snapshot[i];
}

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    const double n = static_cast<double>(v.size());
    for (double x : v) r.mean += x;
    r.mean /= n;
    if (v.size() < 2) return r;
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / (n - 1.0));
    return r;
}

} // namespace

TrainOutcome train(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed) {
    config.training.validate();
    const Dataset& tr = data.splits.train;
    if (tr.size() == 0) throw DataError("train: training slice is empty");

    M3TNConfig mc = config.model;
    mc.num_treatments = data.num_treatments;
    mc.seed = derive_seed(seed, 0);
    auto model = make_model(mc, data.encoder);
    const auto params = model->params();

    AdamState adam(config.training.learning_rate);
    Rng shuffle_rng(derive_seed(seed, 1));
    GradientSet grads;

    const bool use_val = config.training.patience > 0 && data.splits.val.size() > 0;
    double best_val = -std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_snapshot;
    int stall = 0;

    const std::size_t n = tr.size();
    const std::size_t batch = std::min<std::size_t>(config.training.batch_size, n);
    std::vector<std::size_t> order(n);

    TrainOutcome outcome;
    outcome.result.seed = seed;
    outcome.result.param_count = model->param_count();

    double wall = 0.0;
    for (int epoch = 1; epoch <= config.training.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(n, start + batch);
            Matrix bx(end - start, tr.features.cols);
            std::vector<int> bt(end - start);
            std::vector<double> by(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t r = order[i];
                for (std::size_t j = 0; j < tr.features.cols; ++j) {
                    bx(i - start, j) = tr.features(r, j);
                }
                bt[i - start] = tr.treatment[r];
                by[i - start] = tr.response[r];
            }
            const double loss = model->loss_and_gradients(bx, bt, by, grads);
            if (!std::isfinite(loss)) {
                throw TrainingError("training loss is not finite at epoch " +
                                        std::to_string(epoch),
                                    epoch);
            }
            adam.step(params, grads);
            loss_sum += loss;
            ++batches;
        }
        wall += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        outcome.result.loss_trace.push_back(loss_sum / static_cast<double>(batches));

        if (use_val) {
            const double score = validation_objective(*model, data.splits.val, config);
            if (score > best_val) {
                best_val = score;
                best_snapshot = snapshot_params(params);
                stall = 0;
            } else {
                ++stall;
            }
            if (stall >= config.training.patience) break;
        }
    }

    if (use_val && !best_snapshot.empty()) {
        restore_params(params, best_snapshot);
        outcome.result.best_validation = best_val;
        outcome.result.has_validation = true;
    }
    outcome.result.wall_seconds = std::max(wall, 1e-9);
    outcome.model = std::move(model);
    return outcome;
}

// ---------------------------------------------------------------------------
// seeded protocol
// ---------------------------------------------------------------------------

namespace {

// run worker(i) for i in [0, count) on `jobs` threads; rethrows the first
// failure tagged with its seed
void parallel_for_seeds(std::size_t count, int jobs,
                        const std::vector<std::uint64_t>& seed_of,
                        const std::function<void(std::size_t)>& worker) {
    jobs = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    std::vector<std::exception_ptr> errors(count);
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                worker(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < jobs; ++t) {
            threads.emplace_back([&, t] {
                for (std::size_t i = static_cast<std::size_t>(t); i < count;
                     i += static_cast<std::size_t>(jobs)) {
                    try {
                        worker(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : threads) th.join();
    }
    for (std::size_t i = 0; i < count; ++i) {
        if (!errors[i]) continue;
        const std::string tag = "seed " + std::to_string(seed_of[i]) + ": ";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const TrainingError& e) {
            throw TrainingError(tag + e.what(), e.epoch);
        } catch (const ConfigError& e) {
            throw ConfigError(tag + e.what());
        } catch (const DataError& e) {
            throw DataError(tag + e.what());
        } catch (const MetricError& e) {
            throw MetricError(tag + e.what());
        } catch (const std::exception& e) {
            throw std::runtime_error(tag + e.what());
        }
    }
}

} // namespace

ProtocolResult run_protocol(const ExperimentConfig& config, const PreparedData& data, int jobs) {
    config.training.validate();
    if (data.splits.test.size() == 0) throw DataError("protocol: test slice is empty");
    const auto& seeds = config.training.seeds;

    ProtocolResult result;
    result.runs.resize(seeds.size());
    std::vector<std::unique_ptr<UpliftModel>> first_slot(1);

    parallel_for_seeds(seeds.size(), jobs, seeds, [&](std::size_t i) {
        TrainOutcome outcome = train(config, data, seeds[i]);
        const UpliftPrediction pred = outcome.model->predict(data.splits.test.features);
        outcome.result.test_report = evaluate(pred, data.splits.test, config.metrics.grid_size,
                                              config.metrics.num_bins);
        result.runs[i] = std::move(outcome.result);
        if (i == 0) first_slot[0] = std::move(outcome.model);
    });

    std::vector<double> mq, sq, mk, sk;
    for (const auto& r : result.runs) {
        mq.push_back(r.test_report.m_qini);
        sq.push_back(r.test_report.sd_qini);
        mk.push_back(r.test_report.m_kendall);
        sk.push_back(r.test_report.sd_kendall);
    }
    const auto agg = [](const std::vector<double>& v) {
        const MeanStd ms = mean_std(v);
        return ProtocolAggregate{ms.mean, ms.stddev};
    };
    result.m_qini = agg(mq);
    result.sd_qini = agg(sq);
    result.m_kendall = agg(mk);
    result.sd_kendall = agg(sk);
    result.first_model = std::move(first_slot[0]);
    return result;
}

std::string ProtocolResult::to_json() const {
    nlohmann::json doc;
    nlohmann::json per_seed = nlohmann::json::array();
    std::vector<std::uint64_t> seeds;
    for (const auto& r : runs) {
        seeds.push_back(r.seed);
        nlohmann::json rj;
        rj["seed"] = r.seed;
        rj["param_count"] = r.param_count;
        rj["loss_trace"] = r.loss_trace;
        if (r.has_validation) rj["best_validation"] = r.best_validation;
        rj["report"] = nlohmann::json::parse(r.test_report.to_json());
        per_seed.push_back(std::move(rj));
    }
    doc["seeds"] = seeds;
    doc["per_seed"] = std::move(per_seed);
    auto agg = [](const ProtocolAggregate& a) {
        nlohmann::json j;
        j["mean"] = a.mean;
        j["std"] = a.stddev;
        return j;
    };
    doc["aggregate"]["mQini"] = agg(m_qini);
    doc["aggregate"]["sdQini"] = agg(sd_qini);
    doc["aggregate"]["mKendall"] = agg(m_kendall);
    doc["aggregate"]["sdKendall"] = agg(sd_kendall);
    return doc.dump(2);
}

// ---------------------------------------------------------------------------
// random hyperparameter search
// ---------------------------------------------------------------------------

namespace {

struct SpaceDims {
    std::array<std::size_t, 6> radix;
};

SpaceDims space_dims(const SearchSpace& s) {
    auto dim = [](std::size_t n) { return std::max<std::size_t>(1, n); };
    return SpaceDims{{dim(s.num_experts.size()), dim(s.learning_rate.size()),
                      dim(s.l2_lambda.size()), dim(s.batch_size.size()),
                      dim(s.expert_hidden.size()), dim(s.head_hidden.size())}};
}

Trial decode_trial(std::size_t code, const SearchSpace& s, const ExperimentConfig& base) {
    const SpaceDims dims = space_dims(s);
    std::array<std::size_t, 6> idx{};
    for (std::size_t d = 0; d < 6; ++d) {
        idx[d] = code % dims.radix[d];
        code /= dims.radix[d];
    }
    Trial t;
    t.num_experts = s.num_experts.empty() ? base.model.num_experts : s.num_experts[idx[0]];
    t.learning_rate = s.learning_rate.empty() ? base.training.learning_rate : s.learning_rate[idx[1]];
    t.l2_lambda = s.l2_lambda.empty() ? base.model.l2_lambda : s.l2_lambda[idx[2]];
    t.batch_size = s.batch_size.empty() ? base.training.batch_size : s.batch_size[idx[3]];
    t.expert_hidden = s.expert_hidden.empty() ? base.model.expert_hidden : s.expert_hidden[idx[4]];
    t.head_hidden = s.head_hidden.empty() ? base.model.head_hidden : s.head_hidden[idx[5]];
    return t;
}

ExperimentConfig apply_trial(const ExperimentConfig& base, const Trial& t) {
    ExperimentConfig cfg = base;
    cfg.model.num_experts = t.num_experts;
    cfg.model.l2_lambda = t.l2_lambda;
    cfg.model.expert_hidden = t.expert_hidden;
    cfg.model.head_hidden = t.head_hidden;
    cfg.training.learning_rate = t.learning_rate;
    cfg.training.batch_size = t.batch_size;
    return cfg;
}

std::string widths_str(const std::vector<std::size_t>& w) {
    std::string out;
    for (std::size_t i = 0; i < w.size(); ++i) {
        out += std::to_string(w[i]);
        if (i + 1 < w.size()) out += "-";
    }
    return out.empty() ? "none" : out;
}

} // namespace

SearchResult hyper_search(const ExperimentConfig& config, const PreparedData& data, int jobs) {
    config.training.validate();
    if (config.search_budget < 1) throw ConfigError("search.budget must be >= 1");
    const std::size_t total = config.search_space.combination_count();
    if (total == 0) throw ConfigError("search: hyperparameter space is empty");
    if (data.splits.val.size() == 0) {
        throw ConfigError("search: a nonempty validation slice is required");
    }

    const std::size_t budget = std::min(config.search_budget, total);
    std::vector<std::size_t> codes;
    if (budget == total) {
        codes.resize(total);
        std::iota(codes.begin(), codes.end(), std::size_t{0});
    } else if (total <= 100000) {
        // sample without replacement: shuffle the finite space, take a prefix
        codes.resize(total);
        std::iota(codes.begin(), codes.end(), std::size_t{0});
        Rng rng(derive_seed(config.search_seed, 101));
        rng.shuffle(codes);
        codes.resize(budget);
    } else {
        Rng rng(derive_seed(config.search_seed, 101));
        std::set<std::size_t> seen;
        while (seen.size() < budget) seen.insert(rng.index(total));
        codes.assign(seen.begin(), seen.end());
    }

    SearchResult result;
    result.trials.resize(codes.size());

    parallel_for_seeds(codes.size(), jobs,
                       std::vector<std::uint64_t>(codes.begin(), codes.end()),
                       [&](std::size_t i) {
        Trial trial = decode_trial(codes[i], config.search_space, config);
        trial.index = i;
        const ExperimentConfig trial_cfg = apply_trial(config, trial);
        for (const std::uint64_t seed : config.training.seeds) {
            const TrainOutcome outcome = train(trial_cfg, data, seed);
            const double score =
                outcome.result.has_validation
                    ? outcome.result.best_validation
                    : validation_objective(*outcome.model, data.splits.val, trial_cfg);
            trial.per_seed.push_back(score);
        }
        double sum = 0.0;
        for (double s : trial.per_seed) sum += s;
        trial.objective = sum / static_cast<double>(trial.per_seed.size());
        result.trials[i] = std::move(trial);
    });

    result.best_index = 0;
    for (std::size_t i = 1; i < result.trials.size(); ++i) {
        if (result.trials[i].objective > result.trials[result.best_index].objective) {
            result.best_index = i;
        }
    }
    result.best_config = apply_trial(config, result.trials[result.best_index]);
    return result;
}

void save_trials_csv(const SearchResult& result, const std::vector<std::uint64_t>& seeds,
                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("trials csv: cannot write " + path);
    out << "trial,num_experts,expert_hidden,head_hidden,learning_rate,l2_lambda,batch_size";
    for (const auto seed : seeds) out << ",val_objective_seed_" << seed;
    out << ",objective,best\n";
    out.precision(17);
    for (const auto& t : result.trials) {
        out << t.index << "," << t.num_experts << "," << widths_str(t.expert_hidden) << ","
            << widths_str(t.head_hidden) << "," << t.learning_rate << "," << t.l2_lambda << ","
            << t.batch_size;
        for (const double s : t.per_seed) out << "," << s;
        out << "," << t.objective << "," << (t.index == result.best_index ? 1 : 0) << "\n";
    }
}

// ---------------------------------------------------------------------------
// complexity report and expert sweep
// ---------------------------------------------------------------------------

std::vector<ComplexityRow> complexity_report(const ExperimentConfig& config,
                                             const PreparedData& data) {
    if (config.complexity_epochs < 1) throw ConfigError("complexity.epochs must be >= 1");
    std::vector<ComplexityRow> rows;
    for (const ModelKind kind : config.complexity_kinds) {
        ExperimentConfig cfg = config;
        cfg.model.kind = kind;
        cfg.training.epochs = config.complexity_epochs;
        cfg.training.patience = 0; // fixed epoch count, no evaluation inside the loop
        const TrainOutcome outcome = train(cfg, data, config.training.seeds.front());
        rows.push_back({kind, outcome.result.param_count, outcome.result.wall_seconds});
    }
    return rows;
}

void save_complexity_csv(const std::vector<ComplexityRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("complexity csv: cannot write " + path);
    out << "kind,param_count,train_seconds\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& r : rows) {
        out << model_kind_name(r.kind) << "," << r.param_count << "," << r.train_seconds << "\n";
    }
}

std::vector<SweepRow> expert_sweep(const ExperimentConfig& config, const PreparedData& data,
                                   int jobs) {
    if (config.sweep_expert_counts.empty()) {
        throw ConfigError("sweep.expert_counts must not be empty");
    }
    std::vector<SweepRow> rows;
    for (const std::size_t count : config.sweep_expert_counts) {
        if (count < 1) throw ConfigError("sweep.expert_counts entries must be >= 1");
        ExperimentConfig cfg = config;
        cfg.model.num_experts = count;
        const ProtocolResult protocol = run_protocol(cfg, data, jobs);
        rows.push_back({count, protocol.m_qini, protocol.sd_qini, protocol.m_kendall,
                        protocol.sd_kendall});
    }
    return rows;
}

void save_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("sweep csv: cannot write " + path);
    out << "num_experts,mQini_mean,mQini_std,sdQini_mean,sdQini_std,"
           "mKendall_mean,mKendall_std,sdKendall_mean,sdKendall_std\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.num_experts << "," << r.m_qini.mean << "," << r.m_qini.stddev << ","
            << r.sd_qini.mean << "," << r.sd_qini.stddev << "," << r.m_kendall.mean << ","
            << r.m_kendall.stddev << "," << r.sd_kendall.mean << "," << r.sd_kendall.stddev
            << "\n";
    }
}

} // namespace uplift
