#pragma once

#include "uplift/matrix.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace uplift {

enum class ColumnKind { Numeric, Categorical, Treatment, Response };

std::string column_kind_name(ColumnKind kind);
ColumnKind column_kind_from_name(const std::string& name);

struct SchemaColumn {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
};

// Ordered column layout of a CSV dataset. Exactly one treatment column and
// one response column; everything else is a feature.
struct DatasetSchema {
    std::vector<SchemaColumn> columns;

    void validate() const;
    std::size_t feature_count() const;
};

// One feature column after ingestion. Categorical columns carry the
// label -> dense index mapping in first-seen order.
struct FeatureColumn {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    std::vector<std::string> categories; // categorical only; index is position

    std::size_t cardinality() const { return categories.size(); }
};

struct Dataset {
    std::vector<FeatureColumn> feature_columns;
    Matrix features; // n x F; categorical cells hold the dense index
    std::vector<int> treatment;
    std::vector<double> response;
    Matrix true_tau; // n x K when ground truth is known, else empty

    std::size_t size() const { return treatment.size(); }
    bool has_truth() const { return !true_tau.empty(); }
    // K, inferred as max(t)
    int num_treatments() const;
    void validate() const;
};

enum class UpliftFamily { LinearSigmoid, Piecewise };

// Randomized-experiment generator spec: treatment is assigned independently
// of the features, so the stored per-arm effects are the estimand itself.
struct SyntheticSpec {
    std::size_t n = 1000;
    std::size_t d = 10;
    int num_treatments = 2;               // K
    std::vector<double> propensities;     // K+1 entries, positive, sum 1
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    UpliftFamily uplift = UpliftFamily::LinearSigmoid;

    void validate() const;
};

Dataset load_csv(const std::string& path, const DatasetSchema& schema);
void save_csv(const Dataset& dataset, const std::string& path);
void save_truth_csv(const Dataset& dataset, const std::string& path);

Dataset generate_synthetic(const SyntheticSpec& spec);

struct SplitResult {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Seeded shuffle, then contiguous slices sized floor(fraction * n) with the
// remainder going to train. Every nonempty slice must contain every arm;
// the shuffle is retried up to 100 times before giving up.
SplitResult split(const Dataset& dataset, double train_frac, double val_frac, double test_frac,
                  std::uint64_t seed);

// Per-numeric-column mean/std, fitted on the training slice only.
struct Standardizer {
    std::vector<double> mean; // one entry per feature column; categorical slots unused
    std::vector<double> stddev;

    static Standardizer fit(const Dataset& train);
    void apply(Dataset& dataset) const;
};

} // namespace uplift
