#include "uplift/metrics.hpp"

#include "uplift/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace uplift {

void ArmSlice::validate() const {
    if (scores.size() != treated_flag.size() || scores.size() != responses.size()) {
        throw MetricError("arm slice: field lengths disagree");
    }
    bool any_treated = false;
    bool any_control = false;
    for (int f : treated_flag) {
        (f ? any_treated : any_control) = true;
    }
    if (!any_treated) throw MetricError("arm slice: no treated samples");
    if (!any_control) throw MetricError("arm slice: no control samples");
}

namespace {

// descending score, ties broken by original index (stable, seed-independent)
std::vector<std::size_t> rank_order(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

} // namespace

QiniCurve qini_curve(const ArmSlice& arm, std::size_t grid_size) {
    arm.validate();
    if (grid_size < 2) throw MetricError("qini_curve: grid_size must be >= 2");

    const std::size_t n = arm.size();
    const auto order = rank_order(arm.scores);

    // running sums over the ranked prefix
    std::vector<double> sum_treated(n + 1, 0.0), sum_control(n + 1, 0.0);
    std::vector<std::size_t> n_treated(n + 1, 0), n_control(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = order[i];
        sum_treated[i + 1] = sum_treated[i] + (arm.treated_flag[s] ? arm.responses[s] : 0.0);
        sum_control[i + 1] = sum_control[i] + (arm.treated_flag[s] ? 0.0 : arm.responses[s]);
        n_treated[i + 1] = n_treated[i] + (arm.treated_flag[s] ? 1 : 0);
        n_control[i + 1] = n_control[i] + (arm.treated_flag[s] ? 0 : 1);
    }

    QiniCurve curve;
    curve.fraction.reserve(grid_size);
    curve.value.reserve(grid_size);
    for (std::size_t j = 1; j <= grid_size; ++j) {
        const double phi = static_cast<double>(j) / static_cast<double>(grid_size);
        const auto top = static_cast<std::size_t>(phi * static_cast<double>(n) + 1e-9);
        double q = 0.0;
        if (n_control[top] > 0) {
            const double ratio =
                static_cast<double>(n_treated[top]) / static_cast<double>(n_control[top]);
            q = sum_treated[top] - sum_control[top] * ratio;
        }
        curve.fraction.push_back(phi);
        curve.value.push_back(q);
    }

    // trapezoid area from (0, 0) through the grid points
    double area = 0.0;
    double prev_phi = 0.0, prev_q = 0.0;
    for (std::size_t j = 0; j < grid_size; ++j) {
        area += (curve.fraction[j] - prev_phi) * (curve.value[j] + prev_q) * 0.5;
        prev_phi = curve.fraction[j];
        prev_q = curve.value[j];
    }
    const double q_final = curve.value.back();
    curve.area = area;
    curve.coefficient_raw = area - 0.5 * q_final; // chord from (0,0) to (1, Q(1))
    curve.coefficient =
        q_final != 0.0 ? curve.coefficient_raw / std::abs(q_final) : curve.coefficient_raw;
    return curve;
}

double kendall_uplift(const ArmSlice& arm, std::size_t num_bins) {
    arm.validate();
    if (num_bins < 2) throw MetricError("kendall_uplift: num_bins must be >= 2");

    const std::size_t n = arm.size();
    const auto order = rank_order(arm.scores);

    // quantile bins over the ranked samples, highest scores first
    struct Bin {
        double treated_sum = 0.0, control_sum = 0.0;
        std::size_t treated_n = 0, control_n = 0;
        bool usable() const { return treated_n > 0 && control_n > 0; }
        double uplift() const {
            return treated_sum / static_cast<double>(treated_n) -
                   control_sum / static_cast<double>(control_n);
        }
    };
    std::vector<Bin> raw(num_bins);
    for (std::size_t b = 0; b < num_bins; ++b) {
        const std::size_t lo = b * n / num_bins;
        const std::size_t hi = (b + 1) * n / num_bins;
        for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t s = order[i];
            if (arm.treated_flag[s]) {
                raw[b].treated_sum += arm.responses[s];
                ++raw[b].treated_n;
            } else {
                raw[b].control_sum += arm.responses[s];
                ++raw[b].control_n;
            }
        }
    }

    // merge deficient bins downward (into the next, lower-score bin); a
    // deficient final bin folds back into the last usable one
    std::vector<Bin> bins;
    Bin pending;
    auto merge_into = [](Bin& dst, const Bin& src) {
        dst.treated_sum += src.treated_sum;
        dst.control_sum += src.control_sum;
        dst.treated_n += src.treated_n;
        dst.control_n += src.control_n;
    };
    for (const Bin& b : raw) {
        merge_into(pending, b);
        if (pending.usable()) {
            bins.push_back(pending);
            pending = Bin{};
        }
    }
    if (pending.treated_n + pending.control_n > 0 && !bins.empty()) {
        merge_into(bins.back(), pending);
    }
    if (bins.size() < 2) {
        throw MetricError("kendall_uplift: fewer than 2 usable bins after merging");
    }

    // predicted rank order is the bin order itself; count pair agreements
    long concordant = 0, discordant = 0;
    const std::size_t B = bins.size();
    for (std::size_t a = 0; a < B; ++a) {
        for (std::size_t b = a + 1; b < B; ++b) {
            const double ua = bins[a].uplift();
            const double ub = bins[b].uplift();
            if (ua > ub) ++concordant;
            else if (ua < ub) ++discordant;
        }
    }
    const double pairs = static_cast<double>(B) * static_cast<double>(B - 1) / 2.0;
    return static_cast<double>(concordant - discordant) / pairs;
}

ArmSlice make_arm_slice(const UpliftPrediction& pred, const Dataset& dataset, int arm) {
    if (arm < 1 || static_cast<std::size_t>(arm) > pred.num_treatments()) {
        throw MetricError("arm " + std::to_string(arm) + " is out of range");
    }
    ArmSlice slice;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const int t = dataset.treatment[i];
        if (t != 0 && t != arm) continue;
        slice.scores.push_back(pred.tau(i, static_cast<std::size_t>(arm) - 1));
        slice.treated_flag.push_back(t == arm ? 1 : 0);
        slice.responses.push_back(dataset.response[i]);
    }
    bool any_treated = false, any_control = false;
    for (int f : slice.treated_flag) (f ? any_treated : any_control) = true;
    if (!any_treated) throw MetricError("arm " + std::to_string(arm) + " has no treated samples");
    if (!any_control) throw MetricError("arm " + std::to_string(arm) + " has no control samples");
    return slice;
}

namespace {

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

// sample standard deviation (n-1); degenerate single-value case reports 0
MeanSd mean_sd(const std::vector<double>& values) {
    MeanSd r;
    const double n = static_cast<double>(values.size());
    for (double v : values) r.mean += v;
    r.mean /= n;
    if (values.size() < 2) return r;
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(ss / (n - 1.0));
    return r;
}

} // namespace

EvaluationReport evaluate(const UpliftPrediction& pred, const Dataset& dataset,
                          std::size_t grid_size, std::size_t num_bins) {
    if (pred.num_samples() != dataset.size()) {
        throw MetricError("evaluate: prediction count does not match dataset size");
    }
    const int K = static_cast<int>(pred.num_treatments());
    EvaluationReport rep;
    for (int k = 1; k <= K; ++k) {
        const ArmSlice slice = make_arm_slice(pred, dataset, k);
        QiniCurve curve = qini_curve(slice, grid_size);
        rep.qini.push_back(curve.coefficient);
        rep.qini_raw.push_back(curve.coefficient_raw);
        rep.kendall.push_back(kendall_uplift(slice, num_bins));
        rep.curves.push_back(std::move(curve));
    }
    const MeanSd q = mean_sd(rep.qini);
    const MeanSd t = mean_sd(rep.kendall);
    rep.m_qini = q.mean;
    rep.sd_qini = q.sd;
    rep.se_qini = q.sd / std::sqrt(static_cast<double>(K));
    rep.m_kendall = t.mean;
    rep.sd_kendall = t.sd;
    rep.se_kendall = t.sd / std::sqrt(static_cast<double>(K));
    return rep;
}

double mean_qini(const UpliftPrediction& pred, const Dataset& dataset, std::size_t grid_size) {
    const int K = static_cast<int>(pred.num_treatments());
    double sum = 0.0;
    for (int k = 1; k <= K; ++k) {
        sum += qini_curve(make_arm_slice(pred, dataset, k), grid_size).coefficient;
    }
    return sum / static_cast<double>(K);
}

double mean_kendall(const UpliftPrediction& pred, const Dataset& dataset, std::size_t num_bins) {
    const int K = static_cast<int>(pred.num_treatments());
    double sum = 0.0;
    for (int k = 1; k <= K; ++k) {
        sum += kendall_uplift(make_arm_slice(pred, dataset, k), num_bins);
    }
    return sum / static_cast<double>(K);
}

std::string EvaluationReport::to_json() const {
    nlohmann::json doc;
    doc["num_treatments"] = qini.size();
    nlohmann::json arms = nlohmann::json::array();
    for (std::size_t k = 0; k < qini.size(); ++k) {
        nlohmann::json arm;
        arm["treatment"] = k + 1;
        arm["qini"] = qini[k];
        arm["qini_raw"] = qini_raw[k];
        arm["kendall"] = kendall[k];
        arm["curve"]["fraction"] = curves[k].fraction;
        arm["curve"]["value"] = curves[k].value;
        arms.push_back(std::move(arm));
    }
    doc["arms"] = std::move(arms);
    doc["mQini"] = m_qini;
    doc["sdQini"] = sd_qini;
    doc["seQini"] = se_qini;
    doc["mKendall"] = m_kendall;
    doc["sdKendall"] = sd_kendall;
    doc["seKendall"] = se_kendall;
    return doc.dump(2);
}

void save_curve_csv(const QiniCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("curve csv: cannot write " + path);
    out << "fraction,qini_value\n";
    out.precision(17);
    for (std::size_t i = 0; i < curve.fraction.size(); ++i) {
        out << curve.fraction[i] << "," << curve.value[i] << "\n";
    }
}

} // namespace uplift
