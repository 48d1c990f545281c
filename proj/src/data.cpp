#include "uplift/data.hpp"

#include "uplift/errors.hpp"
#include "uplift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace uplift {

std::string column_kind_name(ColumnKind kind) {
    switch (kind) {
    case ColumnKind::Numeric: return "numeric";
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Treatment: return "treatment";
    case ColumnKind::Response: return "response";
    }
    return "unknown";
}

ColumnKind column_kind_from_name(const std::string& name) {
    if (name == "numeric") return ColumnKind::Numeric;
    if (name == "categorical") return ColumnKind::Categorical;
    if (name == "treatment") return ColumnKind::Treatment;
    if (name == "response") return ColumnKind::Response;
    throw ConfigError("schema: unknown column kind '" + name + "'");
}

void DatasetSchema::validate() const {
    std::size_t treatments = 0;
    std::size_t responses = 0;
    for (const auto& c : columns) {
        if (c.kind == ColumnKind::Treatment) ++treatments;
        if (c.kind == ColumnKind::Response) ++responses;
    }
    if (treatments != 1 || responses != 1) {
        throw ConfigError("schema: need exactly one treatment and one response column, got " +
                          std::to_string(treatments) + " and " + std::to_string(responses));
    }
}

std::size_t DatasetSchema::feature_count() const {
    std::size_t n = 0;
    for (const auto& c : columns) {
        if (c.kind == ColumnKind::Numeric || c.kind == ColumnKind::Categorical) ++n;
    }
    return n;
}

int Dataset::num_treatments() const {
    int k = 0;
    for (int t : treatment) k = std::max(k, t);
    return k;
}

void Dataset::validate() const {
    const std::size_t n = size();
    if (features.rows != n || response.size() != n) {
        throw DataError("dataset: row counts disagree");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (treatment[i] < 0) throw DataError("dataset: negative treatment at row " + std::to_string(i));
        if (!std::isfinite(response[i])) throw DataError("dataset: non-finite response at row " + std::to_string(i));
    }
    if (!features.all_finite()) throw DataError("dataset: non-finite feature value");
    if (has_truth() && true_tau.rows != n) throw DataError("dataset: ground-truth row count disagrees");
}

void SyntheticSpec::validate() const {
    if (num_treatments < 1) throw ConfigError("synthetic: num_treatments must be >= 1");
    if (d < 1) throw ConfigError("synthetic: d must be >= 1");
    if (propensities.size() != static_cast<std::size_t>(num_treatments) + 1) {
        throw ConfigError("synthetic: propensities must have num_treatments+1 entries, got " +
                          std::to_string(propensities.size()));
    }
    double sum = 0.0;
    for (double p : propensities) {
        if (p <= 0.0) throw ConfigError("synthetic: propensities must be positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw ConfigError("synthetic: propensities must sum to 1, got " + std::to_string(sum));
    }
    if (noise_std < 0.0) throw ConfigError("synthetic: noise_std must be >= 0");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell += ch;
        }
    }
    cells.push_back(cell);
    return cells;
}

double parse_double(const std::string& cell, std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw DataError("csv: cannot parse '" + cell + "' as a number at row " +
                        std::to_string(row) + ", column " + col);
    }
}

int parse_treatment(const std::string& cell, std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(cell, &pos);
        if (pos != cell.size() || v < 0) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw DataError("csv: cannot parse '" + cell + "' as a treatment label at row " +
                        std::to_string(row) + ", column " + col);
    }
}

// shortest decimal text that round-trips a double
std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    for (int prec = 15; prec <= 16; ++prec) {
        char probe[32];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
        std::sscanf(probe, "%lf", &back);
        if (back == v) return probe;
    }
    return buf;
}

} // namespace

Dataset load_csv(const std::string& path, const DatasetSchema& schema) {
    schema.validate();
    std::ifstream in(path);
    if (!in) throw DataError("csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("csv: " + path + " is empty");
    const auto header = split_line(line);
    if (header.size() != schema.columns.size()) {
        throw DataError("csv: header has " + std::to_string(header.size()) + " columns, schema has " +
                        std::to_string(schema.columns.size()));
    }
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] != schema.columns[j].name) {
            throw DataError("csv: header column '" + header[j] + "' does not match schema column '" +
                            schema.columns[j].name + "'");
        }
    }

    Dataset ds;
    std::vector<std::size_t> feature_cols;
    for (std::size_t j = 0; j < schema.columns.size(); ++j) {
        const auto& c = schema.columns[j];
        if (c.kind == ColumnKind::Numeric || c.kind == ColumnKind::Categorical) {
            ds.feature_columns.push_back({c.name, c.kind, {}});
            feature_cols.push_back(j);
        }
    }

    std::vector<double> values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        const auto cells = split_line(line);
        if (cells.size() != schema.columns.size()) {
            throw DataError("csv: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(schema.columns.size()));
        }
        std::size_t f = 0;
        for (std::size_t j = 0; j < schema.columns.size(); ++j) {
            const auto& c = schema.columns[j];
            switch (c.kind) {
            case ColumnKind::Numeric:
                values.push_back(parse_double(cells[j], row, c.name));
                ++f;
                break;
            case ColumnKind::Categorical: {
                auto& cats = ds.feature_columns[f].categories;
                auto it = std::find(cats.begin(), cats.end(), cells[j]);
                std::size_t idx = it - cats.begin();
                if (it == cats.end()) cats.push_back(cells[j]);
                values.push_back(static_cast<double>(idx));
                ++f;
                break;
            }
            case ColumnKind::Treatment:
                ds.treatment.push_back(parse_treatment(cells[j], row, c.name));
                break;
            case ColumnKind::Response:
                ds.response.push_back(parse_double(cells[j], row, c.name));
                break;
            }
        }
    }
    ds.features = Matrix(row, feature_cols.size(), std::move(values));
    ds.validate();
    return ds;
}

void save_csv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("csv: cannot write " + path);
    for (const auto& col : dataset.feature_columns) out << col.name << ",";
    out << "t,y\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (std::size_t j = 0; j < dataset.feature_columns.size(); ++j) {
            const auto& col = dataset.feature_columns[j];
            if (col.kind == ColumnKind::Categorical) {
                out << col.categories[static_cast<std::size_t>(dataset.features(i, j))];
            } else {
                out << format_double(dataset.features(i, j));
            }
            out << ",";
        }
        out << dataset.treatment[i] << "," << format_double(dataset.response[i]) << "\n";
    }
}

void save_truth_csv(const Dataset& dataset, const std::string& path) {
    if (!dataset.has_truth()) throw DataError("truth csv: dataset carries no ground truth");
    std::ofstream out(path);
    if (!out) throw DataError("truth csv: cannot write " + path);
    for (std::size_t k = 0; k < dataset.true_tau.cols; ++k) {
        out << "tau_" << (k + 1) << (k + 1 < dataset.true_tau.cols ? "," : "");
    }
    out << "\n";
    for (std::size_t i = 0; i < dataset.true_tau.rows; ++i) {
        for (std::size_t k = 0; k < dataset.true_tau.cols; ++k) {
            out << format_double(dataset.true_tau(i, k)) << (k + 1 < dataset.true_tau.cols ? "," : "");
        }
        out << "\n";
    }
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int K = spec.num_treatments;

    // weight vectors scaled so the base response has roughly unit variance
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.d));
    std::vector<double> w0(spec.d);
    for (double& w : w0) w = rng.normal() * scale;
    std::vector<std::vector<double>> wk(static_cast<std::size_t>(K), std::vector<double>(spec.d));
    for (auto& w : wk) {
        for (double& v : w) v = rng.normal() * scale;
    }

    Dataset ds;
    for (std::size_t j = 0; j < spec.d; ++j) {
        ds.feature_columns.push_back({"x" + std::to_string(j), ColumnKind::Numeric, {}});
    }
    ds.features = Matrix(spec.n, spec.d);
    ds.treatment.resize(spec.n);
    ds.response.resize(spec.n);
    ds.true_tau = Matrix(spec.n, static_cast<std::size_t>(K));

    for (std::size_t i = 0; i < spec.n; ++i) {
        double base = 0.0;
        for (std::size_t j = 0; j < spec.d; ++j) {
            const double x = rng.normal();
            ds.features(i, j) = x;
            base += w0[j] * x;
        }
        for (int k = 1; k <= K; ++k) {
            double z = 0.0;
            for (std::size_t j = 0; j < spec.d; ++j) z += wk[k - 1][j] * ds.features(i, j);
            double tau;
            switch (spec.uplift) {
            case UpliftFamily::LinearSigmoid:
                tau = k * sigmoid(z);
                break;
            case UpliftFamily::Piecewise:
            default:
                tau = k * (z > 0.0 ? 1.0 : 0.25);
                break;
            }
            ds.true_tau(i, k - 1) = tau;
        }
        // randomized assignment: t drawn independently of x
        const double u = rng.uniform();
        int t = K;
        double acc = 0.0;
        for (int k = 0; k <= K; ++k) {
            acc += spec.propensities[static_cast<std::size_t>(k)];
            if (u < acc) {
                t = k;
                break;
            }
        }
        ds.treatment[i] = t;
        const double noise = spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0;
        ds.response[i] = base + (t > 0 ? ds.true_tau(i, t - 1) : 0.0) + noise;
    }
    return ds;
}

namespace {

Dataset take_rows(const Dataset& src, const std::vector<std::size_t>& order, std::size_t begin,
                  std::size_t end) {
    Dataset out;
    out.feature_columns = src.feature_columns;
    const std::size_t n = end - begin;
    out.features = Matrix(n, src.features.cols);
    out.treatment.resize(n);
    out.response.resize(n);
    if (src.has_truth()) out.true_tau = Matrix(n, src.true_tau.cols);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = order[begin + i];
        for (std::size_t j = 0; j < src.features.cols; ++j) out.features(i, j) = src.features(r, j);
        out.treatment[i] = src.treatment[r];
        out.response[i] = src.response[r];
        if (src.has_truth()) {
            for (std::size_t k = 0; k < src.true_tau.cols; ++k) out.true_tau(i, k) = src.true_tau(r, k);
        }
    }
    return out;
}

bool has_all_arms(const Dataset& ds, int K) {
    if (ds.size() == 0) return true; // empty slices are exempt
    std::vector<bool> seen(static_cast<std::size_t>(K) + 1, false);
    for (int t : ds.treatment) {
        if (t <= K) seen[static_cast<std::size_t>(t)] = true;
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

} // namespace

SplitResult split(const Dataset& dataset, double train_frac, double val_frac, double test_frac,
                  std::uint64_t seed) {
    if (train_frac < 0 || val_frac < 0 || test_frac < 0 ||
        std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("split: fractions must be nonnegative and sum to 1");
    }
    const std::size_t n = dataset.size();
    const int K = dataset.num_treatments();

    // floor-then-distribute: val and test get their floors, remainder to train
    const std::size_t n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n) + 1e-9);
    const std::size_t n_test = static_cast<std::size_t>(test_frac * static_cast<double>(n) + 1e-9);
    const std::size_t n_train = n - n_val - n_test;

    std::vector<std::size_t> order(n);
    Rng rng(seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        SplitResult r;
        r.train = take_rows(dataset, order, 0, n_train);
        r.val = take_rows(dataset, order, n_train, n_train + n_val);
        r.test = take_rows(dataset, order, n_train + n_val, n);
        if (has_all_arms(r.train, K) && has_all_arms(r.val, K) && has_all_arms(r.test, K)) {
            return r;
        }
    }
    throw DataError("split: a slice is missing a treatment arm after 100 shuffles");
}

Standardizer Standardizer::fit(const Dataset& train) {
    Standardizer s;
    const std::size_t f = train.feature_columns.size();
    s.mean.assign(f, 0.0);
    s.stddev.assign(f, 1.0);
    const double n = static_cast<double>(train.size());
    for (std::size_t j = 0; j < f; ++j) {
        if (train.feature_columns[j].kind != ColumnKind::Numeric) continue;
        double sum = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) sum += train.features(i, j);
        const double mean = sum / n;
        double ss = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            const double d = train.features(i, j) - mean;
            ss += d * d;
        }
        s.mean[j] = mean;
        s.stddev[j] = std::sqrt(ss / n);
    }
    return s;
}

void Standardizer::apply(Dataset& dataset) const {
    if (mean.size() != dataset.feature_columns.size()) {
        throw DataError("standardize: stats cover " + std::to_string(mean.size()) +
                        " columns, dataset has " + std::to_string(dataset.feature_columns.size()));
    }
    for (std::size_t j = 0; j < mean.size(); ++j) {
        if (dataset.feature_columns[j].kind != ColumnKind::Numeric) continue;
        if (stddev[j] == 0.0) continue; // constant columns pass through
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            dataset.features(i, j) = (dataset.features(i, j) - mean[j]) / stddev[j];
        }
    }
}

} // namespace uplift
