#include "uplift/errors.hpp"
#include "uplift/metrics.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

using namespace uplift;

namespace {

// treated: (y=1, s=0.9), (y=0, s=0.2); control: (y=0, s=0.8), (y=1, s=0.1)
ArmSlice handmade_arm() {
    ArmSlice arm;
    arm.scores = {0.9, 0.2, 0.8, 0.1};
    arm.treated_flag = {1, 1, 0, 0};
    arm.responses = {1.0, 0.0, 0.0, 1.0};
    return arm;
}

double oracle_of(const ArmSlice& arm, std::size_t grid) {
    return testsupport::qini_oracle(arm.scores, arm.treated_flag, arm.responses, grid);
}

// one treated and one control per bin, bins already in descending score
// order, so the observed bin uplifts are exactly the values given
ArmSlice binned_arm(const std::vector<double>& bin_uplifts) {
    ArmSlice arm;
    double score = static_cast<double>(bin_uplifts.size() + 1);
    for (const double u : bin_uplifts) {
        arm.scores.push_back(score);
        arm.treated_flag.push_back(1);
        arm.responses.push_back(u);
        arm.scores.push_back(score - 0.25);
        arm.treated_flag.push_back(0);
        arm.responses.push_back(0.0);
        score -= 1.0;
    }
    return arm;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("constant scores over exchangeable responses give zero qini") {
    ArmSlice arm;
    for (int i = 0; i < 12; ++i) {
        arm.scores.push_back(0.5);
        arm.treated_flag.push_back(i % 2);
        arm.responses.push_back(0.7);
    }
    const QiniCurve curve = qini_curve(arm, 12);
    CHECK(std::abs(curve.coefficient) < 1e-12);
    CHECK(std::abs(curve.coefficient_raw) < 1e-12);
}

TEST_CASE("handmade 4-sample arm matches the prefix oracle") {
    const ArmSlice arm = handmade_arm();
    const QiniCurve curve = qini_curve(arm, 4);

    // all four prefixes, worked through the oracle: Q = (0, 1, 1, 0)
    CHECK(curve.value[0] == 0.0);
    CHECK(curve.value[1] == doctest::Approx(1.0));
    CHECK(curve.value[2] == doctest::Approx(1.0));
    CHECK(curve.value[3] == doctest::Approx(0.0));

    CHECK(curve.coefficient == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(curve.coefficient == doctest::Approx(oracle_of(arm, 4)).epsilon(1e-12));
}

TEST_CASE("sign-flipped scores match the prefix oracle on the same arm") {
    ArmSlice arm = handmade_arm();
    for (double& s : arm.scores) s = -s;
    const QiniCurve curve = qini_curve(arm, 4);
    CHECK(curve.coefficient == doctest::Approx(-0.375).epsilon(1e-12));
    CHECK(curve.coefficient == doctest::Approx(oracle_of(arm, 4)).epsilon(1e-12));
}

TEST_CASE("qini requires both groups and a usable grid") {
    ArmSlice arm;
    arm.scores = {0.1, 0.2};
    arm.treated_flag = {1, 1};
    arm.responses = {1.0, 0.0};
    CHECK_THROWS_AS(qini_curve(arm, 4), MetricError);
    arm.treated_flag = {0, 0};
    CHECK_THROWS_AS(qini_curve(arm, 4), MetricError);
    arm.treated_flag = {1, 0};
    CHECK_THROWS_AS(qini_curve(arm, 1), MetricError);
}

TEST_CASE("qini matches the brute-force oracle on random arms") {
    Rng rng(404);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 4 + rng.index(47);
        const ArmSlice arm = testsupport::random_arm(rng, n);
        const std::size_t grid = 2 + rng.index(n);
        const QiniCurve curve = qini_curve(arm, grid);
        const double expected =
            testsupport::qini_oracle(arm.scores, arm.treated_flag, arm.responses, grid);
        CHECK(std::abs(curve.coefficient - expected) < 1e-9);
    }
}

TEST_CASE("strictly ordered bin uplifts give kendall of +-1") {
    CHECK(kendall_uplift(binned_arm({0.9, 0.6, 0.4, 0.1}), 4) == 1.0);
    CHECK(kendall_uplift(binned_arm({0.1, 0.4, 0.6, 0.9}), 4) == -1.0);
}

TEST_CASE("four-bin kendall example matches pair enumeration") {
    const std::vector<double> uplifts = {0.3, 0.1, 0.2, 0.0};
    const double expected = testsupport::kendall_tau_oracle(uplifts);
    CHECK(expected == doctest::Approx(2.0 / 3.0)); // 5 concordant, 1 discordant
    CHECK(kendall_uplift(binned_arm(uplifts), 4) == doctest::Approx(expected));
}

TEST_CASE("deficient bins merge downward") {
    // bin 0 has no control; it must merge into bin 1
    ArmSlice arm;
    arm.scores = {6, 5, 4, 3, 2, 1};
    arm.treated_flag = {1, 1, 1, 0, 1, 0};
    arm.responses = {1.0, 1.0, 0.5, 0.0, 0.2, 0.4};
    const double ours = kendall_uplift(arm, 3);
    const double oracle =
        testsupport::kendall_uplift_oracle(arm.scores, arm.treated_flag, arm.responses, 3);
    CHECK(ours == doctest::Approx(oracle));
}

TEST_CASE("kendall fails with fewer than two usable bins") {
    ArmSlice arm;
    arm.scores = {4, 3, 2, 1};
    arm.treated_flag = {1, 1, 1, 0};
    arm.responses = {1.0, 0.5, 0.2, 0.1};
    CHECK_THROWS_AS(kendall_uplift(arm, 2), MetricError);
    CHECK_THROWS_AS(kendall_uplift(arm, 1), MetricError);
}

TEST_CASE("kendall stays in [-1, 1] and matches the full oracle") {
    Rng rng(505);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 8 + rng.index(40);
        const ArmSlice arm = testsupport::random_arm(rng, n);
        const std::size_t bins = 2 + rng.index(7); // B <= 8
        double ours;
        double expected;
        try {
            ours = kendall_uplift(arm, bins);
            expected = testsupport::kendall_uplift_oracle(arm.scores, arm.treated_flag,
                                                          arm.responses, bins);
        } catch (const MetricError&) {
            continue; // merging can legitimately leave fewer than 2 bins
        }
        CHECK(ours == expected);
        CHECK(ours >= -1.0);
        CHECK(ours <= 1.0);
    }
}

TEST_CASE("qini and kendall are invariant to increasing score transforms") {
    Rng rng(606);
    const ArmSlice arm = testsupport::random_arm(rng, 40);
    ArmSlice warped = arm;
    for (double& s : warped.scores) s = std::exp(3.0 * s) + 1.0;

    const QiniCurve a = qini_curve(arm, 20);
    const QiniCurve b = qini_curve(warped, 20);
    CHECK(a.coefficient == b.coefficient);
    CHECK(a.coefficient_raw == b.coefficient_raw);
    CHECK(kendall_uplift(arm, 5) == kendall_uplift(warped, 5));
}

TEST_CASE("row order does not matter when scores are distinct") {
    Rng rng(707);
    ArmSlice arm = testsupport::random_arm(rng, 30);
    for (std::size_t i = 0; i < arm.size(); ++i) {
        arm.scores[i] = static_cast<double>(i) * 0.125; // distinct
    }
    const double q0 = qini_curve(arm, 10).coefficient;
    const double k0 = kendall_uplift(arm, 5);

    std::vector<std::size_t> perm(arm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    ArmSlice shuffled;
    for (const std::size_t i : perm) {
        shuffled.scores.push_back(arm.scores[i]);
        shuffled.treated_flag.push_back(arm.treated_flag[i]);
        shuffled.responses.push_back(arm.responses[i]);
    }
    CHECK(qini_curve(shuffled, 10).coefficient == q0);
    CHECK(kendall_uplift(shuffled, 5) == k0);
}

TEST_CASE("evaluate aggregates per-arm metrics") {
    // two arms with different predictive quality
    Rng rng(808);
    Dataset ds;
    ds.feature_columns = {{"x0", ColumnKind::Numeric, {}}};
    const std::size_t n = 300;
    ds.features = Matrix(n, 1);
    UpliftPrediction pred;
    pred.mu0.assign(n, 0.0);
    pred.tau = Matrix(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        ds.features(i, 0) = rng.normal();
        ds.treatment.push_back(static_cast<int>(i % 3));
        const double effect = ds.features(i, 0) > 0 ? 1.0 : 0.0;
        ds.response.push_back(effect * (ds.treatment[i] > 0 ? 1.0 : 0.0) + 0.1 * rng.normal());
        pred.tau(i, 0) = ds.features(i, 0);               // informative scores
        pred.tau(i, 1) = rng.uniform(-1.0, 1.0);          // noise scores
    }

    const EvaluationReport rep = evaluate(pred, ds, 50, 5);
    CHECK(rep.qini.size() == 2);
    CHECK(rep.kendall.size() == 2);
    CHECK(rep.m_qini == doctest::Approx((rep.qini[0] + rep.qini[1]) / 2.0));
    const double m = rep.m_qini;
    const double sd = std::sqrt((rep.qini[0] - m) * (rep.qini[0] - m) +
                                (rep.qini[1] - m) * (rep.qini[1] - m));
    CHECK(rep.sd_qini == doctest::Approx(sd)); // sample std over two arms
    CHECK(rep.se_qini == doctest::Approx(sd / std::sqrt(2.0)));
    CHECK(rep.m_qini >= std::min(rep.qini[0], rep.qini[1]));
    CHECK(rep.m_qini <= std::max(rep.qini[0], rep.qini[1]));

    const std::string json = rep.to_json();
    CHECK(json.find("\"mQini\"") != std::string::npos);
    CHECK(json.find("\"sdKendall\"") != std::string::npos);

    save_curve_csv(rep.curves[0], "metrics_test_curve.csv");
    const std::string csv = testsupport::slurp("metrics_test_curve.csv");
    CHECK(csv.rfind("fraction,qini_value\n", 0) == 0);
    std::remove("metrics_test_curve.csv");
}

TEST_CASE("single-arm aggregates degrade to zero dispersion") {
    Rng rng(909);
    Dataset ds;
    ds.feature_columns = {{"x0", ColumnKind::Numeric, {}}};
    const std::size_t n = 60;
    ds.features = Matrix(n, 1);
    UpliftPrediction pred;
    pred.mu0.assign(n, 0.0);
    pred.tau = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        ds.features(i, 0) = rng.normal();
        ds.treatment.push_back(i % 2 ? 1 : 0);
        ds.response.push_back(rng.uniform());
        pred.tau(i, 0) = rng.uniform();
    }
    const EvaluationReport rep = evaluate(pred, ds, 10, 3);
    CHECK(rep.sd_qini == 0.0);
    CHECK(rep.sd_kendall == 0.0);
    CHECK(rep.m_qini == rep.qini[0]);
}

TEST_CASE("identical arms score identically") {
    Rng rng(111);
    Dataset ds;
    ds.feature_columns = {{"x0", ColumnKind::Numeric, {}}};
    const std::size_t half = 50;
    ds.features = Matrix(2 * half, 1);
    UpliftPrediction pred;
    pred.mu0.assign(2 * half, 0.0);
    pred.tau = Matrix(2 * half, 2);
    // arms 1 and 2 share samples and scores pairwise
    for (std::size_t i = 0; i < half; ++i) {
        const double score = rng.uniform();
        const double y = rng.uniform();
        const int treated = i % 2 ? 1 : 0;
        for (int arm = 0; arm < 2; ++arm) {
            const std::size_t row = 2 * i + static_cast<std::size_t>(arm);
            ds.features(row, 0) = score;
            ds.treatment.push_back(treated ? arm + 1 : 0);
            ds.response.push_back(y);
            pred.tau(row, 0) = score;
            pred.tau(row, 1) = score;
        }
    }
    const EvaluationReport rep = evaluate(pred, ds, 20, 4);
    CHECK(rep.qini[0] == doctest::Approx(rep.qini[1]));
    CHECK(rep.kendall[0] == rep.kendall[1]);
}

TEST_CASE("evaluate names the missing arm") {
    Dataset ds;
    ds.feature_columns = {{"x0", ColumnKind::Numeric, {}}};
    ds.features = Matrix(4, 1);
    ds.treatment = {0, 1, 0, 1}; // arm 2 never appears
    ds.response = {0.0, 1.0, 0.5, 0.2};
    UpliftPrediction pred;
    pred.mu0.assign(4, 0.0);
    pred.tau = Matrix(4, 2, 0.5);
    try {
        evaluate(pred, ds, 4, 2);
        FAIL("expected MetricError");
    } catch (const MetricError& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
}

} // TEST_SUITE
