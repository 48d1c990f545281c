#pragma once

#include <stdexcept>
#include <string>

namespace uplift {

// Bad configuration: shapes, unknown kinds, malformed config documents.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data: unparseable cells, out-of-range categories, missing arms in a slice.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: backward without a cached forward, and similar sequencing bugs.
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metric cannot be computed on the given slice (no treated samples, too few bins).
struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training failure; carries the epoch (1-based) at which it occurred.
struct TrainingError : std::runtime_error {
    int epoch;
    TrainingError(const std::string& msg, int epoch_) : std::runtime_error(msg), epoch(epoch_) {}
};

} // namespace uplift
