#pragma once

#include "uplift/data.hpp"
#include "uplift/matrix.hpp"
#include "uplift/prediction.hpp"

#include <string>
#include <vector>

namespace uplift {

// One treatment arm against the controls: only samples with t in {0, k},
// scored by the predicted uplift for arm k.
struct ArmSlice {
    std::vector<double> scores;
    std::vector<int> treated_flag; // 1 if t == k, 0 if control
    std::vector<double> responses;

    std::size_t size() const { return scores.size(); }
    void validate() const;
};

struct QiniCurve {
    std::vector<double> fraction; // strictly increasing grid over (0, 1]
    std::vector<double> value;    // incremental gain at each fraction
    double area = 0.0;            // trapezoid area under the curve, from (0, 0)
    double coefficient_raw = 0.0; // area minus the random-targeting chord area
    double coefficient = 0.0;     // raw, normalized by |Q(1)| when Q(1) != 0
};

// Sort by score descending (ties kept in original order), then measure the
// cumulative incremental gain of the top fraction against a reweighted
// control group. Prefixes with no controls contribute 0.
QiniCurve qini_curve(const ArmSlice& arm, std::size_t grid_size);

// Kendall's tau between the predicted bin order and the observed per-bin
// uplift order. Samples are cut into num_bins score-quantile bins; a bin
// without both a treated and a control sample is merged into the next one.
double kendall_uplift(const ArmSlice& arm, std::size_t num_bins);

struct EvaluationReport {
    std::vector<double> qini;     // per arm, normalized coefficient
    std::vector<double> qini_raw; // per arm, unnormalized area difference
    std::vector<double> kendall;  // per arm
    std::vector<QiniCurve> curves;
    double m_qini = 0.0;
    double sd_qini = 0.0; // sample standard deviation across arms
    double se_qini = 0.0; // sd / sqrt(K)
    double m_kendall = 0.0;
    double sd_kendall = 0.0;
    double se_kendall = 0.0;

    std::string to_json() const;
};

ArmSlice make_arm_slice(const UpliftPrediction& pred, const Dataset& dataset, int arm);

EvaluationReport evaluate(const UpliftPrediction& pred, const Dataset& dataset,
                          std::size_t grid_size = 100, std::size_t num_bins = 10);

// Mean per-arm Qini only; the cheap objective used for validation scoring.
double mean_qini(const UpliftPrediction& pred, const Dataset& dataset, std::size_t grid_size);
double mean_kendall(const UpliftPrediction& pred, const Dataset& dataset, std::size_t num_bins);

void save_curve_csv(const QiniCurve& curve, const std::string& path);

} // namespace uplift
