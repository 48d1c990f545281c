#include "uplift/data.hpp"
#include "uplift/errors.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

using namespace uplift;

namespace {

DatasetSchema numeric_schema(std::size_t d) {
    DatasetSchema schema;
    for (std::size_t j = 0; j < d; ++j) {
        schema.columns.push_back({"x" + std::to_string(j), ColumnKind::Numeric});
    }
    schema.columns.push_back({"t", ColumnKind::Treatment});
    schema.columns.push_back({"y", ColumnKind::Response});
    return schema;
}

std::string tmp_path(const std::string& name) {
    return "data_test_" + name;
}

// multiset fingerprint: sorted (t, y) pairs
std::vector<std::pair<int, double>> fingerprint(const Dataset& ds) {
    std::vector<std::pair<int, double>> rows;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        rows.emplace_back(ds.treatment[i], ds.response[i]);
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

} // namespace

TEST_SUITE("data") {

TEST_CASE("load_csv parses a small numeric file") {
    const std::string path = tmp_path("small.csv");
    testsupport::spit(path, "x0,x1,t,y\n1.5,2,0,0.1\n-1,0.25,1,0.2\n3,4,2,0.3\n");
    const Dataset ds = load_csv(path, numeric_schema(2));
    CHECK(ds.size() == 3);
    CHECK(ds.num_treatments() == 2);
    CHECK(ds.features(0, 0) == 1.5);
    CHECK(ds.features(2, 1) == 4.0);
    CHECK(ds.treatment[1] == 1);
    CHECK(ds.response[2] == 0.3);
    std::remove(path.c_str());
}

TEST_CASE("save then load round-trips a dataset") {
    SyntheticSpec spec;
    spec.n = 50;
    spec.d = 3;
    spec.num_treatments = 2;
    spec.propensities = {0.4, 0.3, 0.3};
    spec.noise_std = 0.2;
    spec.seed = 9;
    const Dataset ds = generate_synthetic(spec);

    const std::string path = tmp_path("roundtrip.csv");
    save_csv(ds, path);
    const Dataset back = load_csv(path, numeric_schema(3));
    CHECK(back.size() == ds.size());
    CHECK(bitwise_equal(back.features, ds.features));
    CHECK(back.treatment == ds.treatment);
    CHECK(back.response == ds.response);
    std::remove(path.c_str());
}

TEST_CASE("categorical values are indexed in first-seen order") {
    const std::string path = tmp_path("cats.csv");
    testsupport::spit(path, "c,t,y\nb,0,1\na,1,2\nb,2,3\n");
    DatasetSchema schema;
    schema.columns = {{"c", ColumnKind::Categorical},
                      {"t", ColumnKind::Treatment},
                      {"y", ColumnKind::Response}};
    const Dataset ds = load_csv(path, schema);
    CHECK(ds.feature_columns[0].categories == std::vector<std::string>{"b", "a"});
    CHECK(ds.features(0, 0) == 0.0);
    CHECK(ds.features(1, 0) == 1.0);
    CHECK(ds.features(2, 0) == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("unparseable cells name row and column") {
    const std::string path = tmp_path("bad.csv");
    testsupport::spit(path, "x0,t,y\noops,0,1\n");
    try {
        load_csv(path, numeric_schema(1));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("oops") != std::string::npos);
        CHECK(msg.find("row 1") != std::string::npos);
        CHECK(msg.find("x0") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("noiseless generation recovers both potential outcomes") {
    // same seed, different propensities: identical draws, different arms.
    // a sample that lands in control under A and arm k under B exposes
    // y(0) and y(k) of the same unit, whose gap must be the stored tau.
    SyntheticSpec a;
    a.n = 400;
    a.d = 4;
    a.num_treatments = 2;
    a.noise_std = 0.0;
    a.seed = 31;
    a.propensities = {0.6, 0.2, 0.2};
    SyntheticSpec b = a;
    b.propensities = {0.2, 0.4, 0.4};

    const Dataset da = generate_synthetic(a);
    const Dataset db = generate_synthetic(b);
    CHECK(bitwise_equal(da.features, db.features));
    CHECK(bitwise_equal(da.true_tau, db.true_tau));

    std::size_t checked = 0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        if (da.treatment[i] == 0 && db.treatment[i] > 0) {
            const int k = db.treatment[i];
            // y(k) is built as y(0) + tau, so this equality is bitwise
            CHECK(db.response[i] == da.response[i] + da.true_tau(i, k - 1));
            ++checked;
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("linear-sigmoid uplift stays inside (0, k)") {
    SyntheticSpec spec;
    spec.n = 500;
    spec.d = 5;
    spec.num_treatments = 3;
    spec.propensities = {0.25, 0.25, 0.25, 0.25};
    spec.seed = 17;
    const Dataset ds = generate_synthetic(spec);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (int k = 1; k <= 3; ++k) {
            const double tau = ds.true_tau(i, k - 1);
            CHECK(tau > 0.0);
            CHECK(tau < static_cast<double>(k));
        }
    }
}

TEST_CASE("arm shares concentrate around the propensities") {
    SyntheticSpec spec;
    spec.n = 100000;
    spec.d = 2;
    spec.num_treatments = 3;
    spec.propensities = {0.25, 0.25, 0.25, 0.25};
    spec.seed = 21;
    const Dataset ds = generate_synthetic(spec);
    std::vector<double> share(4, 0.0);
    for (int t : ds.treatment) share[static_cast<std::size_t>(t)] += 1.0;
    for (double& s : share) s /= static_cast<double>(spec.n);
    for (int k = 0; k <= 3; ++k) {
        CHECK(std::abs(share[static_cast<std::size_t>(k)] - 0.25) < 0.01);
    }
}

TEST_CASE("treatment assignment is uncorrelated with every feature") {
    SyntheticSpec spec;
    spec.n = 20000;
    spec.d = 4;
    spec.num_treatments = 2;
    spec.propensities = {0.5, 0.25, 0.25};
    spec.seed = 77;
    const Dataset ds = generate_synthetic(spec);
    const double n = static_cast<double>(ds.size());
    for (std::size_t j = 0; j < spec.d; ++j) {
        double mx = 0.0, mt = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            mx += ds.features(i, j);
            mt += ds.treatment[i] > 0 ? 1.0 : 0.0;
        }
        mx /= n;
        mt /= n;
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const double dx = ds.features(i, j) - mx;
            const double dt = (ds.treatment[i] > 0 ? 1.0 : 0.0) - mt;
            sxy += dx * dt;
            sxx += dx * dx;
            syy += dt * dt;
        }
        const double corr = sxy / std::sqrt(sxx * syy);
        CHECK(std::abs(corr) < 3.0 / std::sqrt(n));
    }
}

TEST_CASE("split obeys the floor-then-distribute sizing rule") {
    SyntheticSpec spec;
    spec.n = 10;
    spec.d = 2;
    spec.num_treatments = 2;
    spec.propensities = {0.4, 0.3, 0.3};
    spec.seed = 5;
    Dataset ds = generate_synthetic(spec);
    // binary arms so even the 2-sample slices can hold every arm
    for (std::size_t i = 0; i < ds.size(); ++i) ds.treatment[i] = static_cast<int>(i % 2);

    const SplitResult r = split(ds, 0.6, 0.2, 0.2, 11);
    CHECK(r.train.size() == 6);
    CHECK(r.val.size() == 2);
    CHECK(r.test.size() == 2);
}

TEST_CASE("degenerate split keeps everything in train") {
    SyntheticSpec spec;
    spec.n = 30;
    spec.d = 2;
    spec.num_treatments = 2;
    spec.propensities = {0.4, 0.3, 0.3};
    spec.seed = 8;
    const Dataset ds = generate_synthetic(spec);
    const SplitResult r = split(ds, 1.0, 0.0, 0.0, 3);
    CHECK(r.train.size() == 30);
    CHECK(r.val.size() == 0);
    CHECK(r.test.size() == 0);
    CHECK(fingerprint(r.train) == fingerprint(ds));
}

TEST_CASE("splits are seed-deterministic and partition the dataset") {
    SyntheticSpec spec;
    spec.n = 200;
    spec.d = 3;
    spec.num_treatments = 2;
    spec.propensities = {0.4, 0.3, 0.3};
    spec.seed = 13;
    const Dataset ds = generate_synthetic(spec);

    const SplitResult r1 = split(ds, 0.5, 0.25, 0.25, 42);
    const SplitResult r2 = split(ds, 0.5, 0.25, 0.25, 42);
    CHECK(bitwise_equal(r1.train.features, r2.train.features));
    CHECK(bitwise_equal(r1.val.features, r2.val.features));
    CHECK(bitwise_equal(r1.test.features, r2.test.features));

    auto all = fingerprint(r1.train);
    const auto fv = fingerprint(r1.val);
    const auto ft = fingerprint(r1.test);
    all.insert(all.end(), fv.begin(), fv.end());
    all.insert(all.end(), ft.begin(), ft.end());
    std::sort(all.begin(), all.end());
    CHECK(all == fingerprint(ds));

    // every slice kept every arm
    for (const Dataset* slice : {&r1.train, &r1.val, &r1.test}) {
        std::vector<bool> seen(3, false);
        for (int t : slice->treatment) seen[static_cast<std::size_t>(t)] = true;
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    }
}

TEST_CASE("split fails when an arm cannot reach every slice") {
    SyntheticSpec spec;
    spec.n = 60;
    spec.d = 2;
    spec.num_treatments = 2;
    spec.propensities = {0.5, 0.3, 0.2};
    spec.seed = 19;
    Dataset ds = generate_synthetic(spec);
    for (std::size_t i = 0; i < ds.size(); ++i) ds.treatment[i] = i % 2 ? 1 : 0;
    ds.treatment[0] = 2; // a single sample of arm 2 cannot be in three slices
    CHECK_THROWS_AS(split(ds, 0.4, 0.3, 0.3, 7), DataError);
}

TEST_CASE("standardize centers and scales the slice it was fitted on") {
    SyntheticSpec spec;
    spec.n = 300;
    spec.d = 3;
    spec.num_treatments = 2;
    spec.propensities = {0.4, 0.3, 0.3};
    spec.seed = 23;
    Dataset ds = generate_synthetic(spec);
    const Standardizer stats = Standardizer::fit(ds);
    stats.apply(ds);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) mean += ds.features(i, j);
        mean /= static_cast<double>(ds.size());
        double var = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            var += (ds.features(i, j) - mean) * (ds.features(i, j) - mean);
        }
        var /= static_cast<double>(ds.size());
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
    }
}

TEST_CASE("standardize hand case and constant-column passthrough") {
    Dataset ds;
    ds.feature_columns = {{"x0", ColumnKind::Numeric, {}}, {"x1", ColumnKind::Numeric, {}}};
    ds.features = Matrix({{0.0, 5.0}, {2.0, 5.0}});
    ds.treatment = {0, 1};
    ds.response = {0.0, 0.0};

    const Standardizer stats = Standardizer::fit(ds);
    CHECK(stats.mean[0] == 1.0);
    CHECK(stats.stddev[0] == 1.0);
    CHECK(stats.stddev[1] == 0.0);

    stats.apply(ds);
    CHECK(ds.features(0, 0) == -1.0);
    CHECK(ds.features(1, 0) == 1.0);
    CHECK(ds.features(0, 1) == 5.0); // zero-variance rule
}

} // TEST_SUITE
