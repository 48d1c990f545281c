#pragma once

#include "uplift/matrix.hpp"

#include <vector>

namespace uplift {

// Batch of per-sample uplift predictions. Every model in the zoo produces
// this shape: a control response mu0 and K uplift scores tau per sample.
// Responses are derived, never stored: response(i, k) is mu0 + tau by
// construction, which is what makes the additivity invariant checkable.
struct UpliftPrediction {
    std::vector<double> mu0; // n
    Matrix tau;              // n x K

    std::size_t num_samples() const { return mu0.size(); }
    std::size_t num_treatments() const { return tau.cols; }

    double response(std::size_t i, int k) const {
        return k == 0 ? mu0[i] : mu0[i] + tau(i, static_cast<std::size_t>(k) - 1);
    }
};

} // namespace uplift
