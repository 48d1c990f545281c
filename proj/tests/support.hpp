#pragma once

// Test-only helpers and independent oracles. Everything here is written as a
// separate, naive computation path on purpose: these functions are what the
// library is checked against, so they must not share code with it.

#include "uplift/data.hpp"
#include "uplift/matrix.hpp"
#include "uplift/metrics.hpp"
#include "uplift/model.hpp"
#include "uplift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

// ---------------------------------------------------------------------------
// finite-difference gradient oracle
// ---------------------------------------------------------------------------

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst_abs_diff = 0.0;
    std::string worst_path;

    bool ok() const { return failed == 0 && checked > 0; }
};

// Central differences of model.loss() against the analytic gradients, entry
// by entry. Pass criterion: |fd - analytic| <= atol + rtol * max(|fd|, |analytic|).
inline GradCheckResult finite_difference_check(uplift::UpliftModel& model,
                                               const uplift::Matrix& x,
                                               const std::vector<int>& t,
                                               const std::vector<double>& y,
                                               double eps = 1e-5, double rtol = 1e-4,
                                               double atol = 1e-7) {
    uplift::GradientSet grads;
    model.loss_and_gradients(x, t, y, grads);

    GradCheckResult result;
    for (const auto& p : model.params()) {
        const uplift::Matrix& analytic = grads.at(p.path);
        for (std::size_t i = 0; i < p.value->data.size(); ++i) {
            const double saved = p.value->data[i];
            p.value->data[i] = saved + eps;
            const double up = model.loss(x, t, y);
            p.value->data[i] = saved - eps;
            const double down = model.loss(x, t, y);
            p.value->data[i] = saved;

            const double fd = (up - down) / (2.0 * eps);
            const double a = analytic.data[i];
            const double diff = std::abs(fd - a);
            const double tol = atol + rtol * std::max(std::abs(fd), std::abs(a));
            ++result.checked;
            if (diff > tol) {
                ++result.failed;
                if (diff > result.worst_abs_diff) {
                    result.worst_abs_diff = diff;
                    result.worst_path = p.path + "[" + std::to_string(i) + "]";
                }
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// qini brute-force oracle
// ---------------------------------------------------------------------------

// Deliberately naive: re-scans the whole prefix at every grid point instead
// of keeping running sums, and integrates with an explicit loop.
inline double qini_oracle(const std::vector<double>& scores, const std::vector<int>& treated,
                          const std::vector<double>& responses, std::size_t grid_size,
                          std::vector<double>* curve_out = nullptr) {
    const std::size_t n = scores.size();

    // stable descending sort by score via index selection
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<double> phis, values;
    for (std::size_t j = 1; j <= grid_size; ++j) {
        const double phi = static_cast<double>(j) / static_cast<double>(grid_size);
        const auto top = static_cast<std::size_t>(std::floor(phi * static_cast<double>(n) + 1e-9));
        double sum_t = 0.0, sum_c = 0.0;
        std::size_t n_t = 0, n_c = 0;
        for (std::size_t i = 0; i < top; ++i) {
            const std::size_t s = order[i];
            if (treated[s]) {
                sum_t += responses[s];
                ++n_t;
            } else {
                sum_c += responses[s];
                ++n_c;
            }
        }
        double q = 0.0;
        if (n_c > 0) q = sum_t - sum_c * (static_cast<double>(n_t) / static_cast<double>(n_c));
        phis.push_back(phi);
        values.push_back(q);
    }
    if (curve_out) *curve_out = values;

    double area = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
        const double phi_prev = j == 0 ? 0.0 : phis[j - 1];
        const double q_prev = j == 0 ? 0.0 : values[j - 1];
        area += (phis[j] - phi_prev) * (values[j] + q_prev) / 2.0;
    }
    const double q_final = values.back();
    const double raw = area - q_final / 2.0;
    return q_final != 0.0 ? raw / std::abs(q_final) : raw;
}

// ---------------------------------------------------------------------------
// kendall oracles
// ---------------------------------------------------------------------------

// tau of a value sequence already in predicted-rank order, by exhaustive
// pair enumeration; ties count as neither concordant nor discordant
inline double kendall_tau_oracle(const std::vector<double>& values) {
    const std::size_t b = values.size();
    long concordant = 0, discordant = 0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) {
            if (values[i] > values[j]) ++concordant;
            if (values[i] < values[j]) ++discordant;
        }
    }
    return static_cast<double>(concordant - discordant) /
           (static_cast<double>(b) * static_cast<double>(b - 1) / 2.0);
}

// full pipeline re-implementation: quantile bins over a stable descending
// sort, deficient bins merged into the next, final leftover folded back
inline double kendall_uplift_oracle(const std::vector<double>& scores,
                                    const std::vector<int>& treated,
                                    const std::vector<double>& responses, std::size_t num_bins) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    struct Group {
        std::vector<double> treated_y, control_y;
    };
    std::vector<Group> groups(num_bins);
    for (std::size_t b = 0; b < num_bins; ++b) {
        for (std::size_t i = b * n / num_bins; i < (b + 1) * n / num_bins; ++i) {
            const std::size_t s = order[i];
            if (treated[s]) groups[b].treated_y.push_back(responses[s]);
            else groups[b].control_y.push_back(responses[s]);
        }
    }

    std::vector<Group> merged;
    Group pending;
    for (const auto& g : groups) {
        pending.treated_y.insert(pending.treated_y.end(), g.treated_y.begin(), g.treated_y.end());
        pending.control_y.insert(pending.control_y.end(), g.control_y.begin(), g.control_y.end());
        if (!pending.treated_y.empty() && !pending.control_y.empty()) {
            merged.push_back(pending);
            pending = Group{};
        }
    }
    if ((!pending.treated_y.empty() || !pending.control_y.empty()) && !merged.empty()) {
        merged.back().treated_y.insert(merged.back().treated_y.end(), pending.treated_y.begin(),
                                       pending.treated_y.end());
        merged.back().control_y.insert(merged.back().control_y.end(), pending.control_y.begin(),
                                       pending.control_y.end());
    }
    if (merged.size() < 2) throw std::runtime_error("oracle: fewer than 2 usable bins");

    std::vector<double> uplifts;
    for (const auto& g : merged) {
        double mt = 0.0, mc = 0.0;
        for (double v : g.treated_y) mt += v;
        for (double v : g.control_y) mc += v;
        uplifts.push_back(mt / static_cast<double>(g.treated_y.size()) -
                          mc / static_cast<double>(g.control_y.size()));
    }
    return kendall_tau_oracle(uplifts);
}

// ---------------------------------------------------------------------------
// misc helpers
// ---------------------------------------------------------------------------

inline std::vector<double> softmax_scalar_oracle(const std::vector<double>& z) {
    double sum = 0.0;
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) sum += std::exp(z[i]);
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::exp(z[i]) / sum;
    return out;
}

// numeric-only encoder with pass-through standardization
inline uplift::EncoderSpec numeric_encoder(std::size_t d) {
    uplift::EncoderSpec spec;
    for (std::size_t j = 0; j < d; ++j) {
        uplift::EncoderColumn col;
        col.name = "x" + std::to_string(j);
        col.kind = uplift::ColumnKind::Numeric;
        spec.columns.push_back(std::move(col));
    }
    return spec;
}

// random arm with guaranteed treated and control presence
inline uplift::ArmSlice random_arm(uplift::Rng& rng, std::size_t n) {
    uplift::ArmSlice arm;
    for (std::size_t i = 0; i < n; ++i) {
        arm.scores.push_back(rng.uniform(-1.0, 1.0));
        arm.treated_flag.push_back(rng.uniform() < 0.5 ? 1 : 0);
        arm.responses.push_back(rng.uniform(0.0, 1.0));
    }
    arm.treated_flag[0] = 1;
    arm.treated_flag[n - 1] = 0;
    return arm;
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

} // namespace testsupport
