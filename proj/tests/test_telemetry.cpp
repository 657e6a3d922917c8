#include <doctest.h>

#include <cmath>

#include "metarca/errors.hpp"
#include "metarca/telemetry.hpp"

#include "helpers.hpp"

using namespace metarca;
using namespace metarca::telemetry;

namespace {

// Baseline alternating 8/12: mean 10, population std exactly 2.
std::vector<double> alternating_baseline(std::size_t n) {
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(i % 2 == 0 ? 8.0 : 12.0);
    return v;
}

IncidentDataset tiny_dataset(const std::vector<double>& baseline,
                             const std::vector<double>& evaluation) {
    IncidentDataset ds;
    ds.case_id = "tiny";
    ds.topology.instances = {{"svc_a", "Microservice"}};
    ds.t0 = 1000;
    ds.t_fault = ds.t0 + static_cast<Timestamp>(baseline.size()) * 10;
    ds.t_rca = ds.t_fault + static_cast<Timestamp>(evaluation.size() - 1) * 10;
    std::vector<double> all = baseline;
    all.insert(all.end(), evaluation.begin(), evaluation.end());
    auto series = testutil::make_series("svc_a", "latency", ds.t0, 10, all);
    ds.series.emplace(SeriesKey{"svc_a", "latency"}, std::move(series));
    return ds;
}

} // namespace

TEST_CASE("z-score arithmetic against a known baseline") {
    const auto ds = tiny_dataset(alternating_baseline(20), {16.0});
    const auto& series = ds.series.begin()->second;
    const auto zs = zscore_series(series, ds.t0, ds.t_fault, ds.t_rca);
    REQUIRE(zs.scoreable);
    REQUIRE(zs.points.size() == 1);
    CHECK(zs.points[0].z == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("constant baseline with equal evaluation gives z = 0") {
    const auto ds = tiny_dataset(std::vector<double>(10, 5.0), {5.0});
    const auto zs = zscore_series(ds.series.begin()->second, ds.t0, ds.t_fault, ds.t_rca);
    REQUIRE(zs.scoreable);
    CHECK(zs.points[0].z == 0.0);
}

TEST_CASE("constant baseline with deviating evaluation clips at the z cap") {
    const auto ds = tiny_dataset(std::vector<double>(10, 5.0), {6.0});
    const auto zs = zscore_series(ds.series.begin()->second, ds.t0, ds.t_fault, ds.t_rca);
    REQUIRE(zs.scoreable);
    CHECK(zs.points[0].z == kZCap);
}

TEST_CASE("fewer than five baseline samples marks the series unscoreable") {
    const auto ds = tiny_dataset({1.0, 2.0, 3.0, 4.0}, {10.0});
    const auto zs = zscore_series(ds.series.begin()->second, ds.t0, ds.t_fault, ds.t_rca);
    CHECK_FALSE(zs.scoreable);
    const auto report = detect_anomalies(ds);
    CHECK_FALSE(report.per_series.begin()->second.is_anomalous);
    CHECK(compute_frz(ds, report).empty());
}

TEST_CASE("z-scores are invariant under shift and positive scaling") {
    const auto base = alternating_baseline(30);
    const std::vector<double> eval = {15.0, 9.0, 13.5};
    for (const double shift : {0.0, 37.5}) {
        for (const double scale : {1.0, 3.25}) {
            auto baseline = base;
            auto evaluation = eval;
            for (auto& v : baseline) v = v * scale + shift;
            for (auto& v : evaluation) v = v * scale + shift;
            const auto ds = tiny_dataset(baseline, evaluation);
            const auto zs =
                zscore_series(ds.series.begin()->second, ds.t0, ds.t_fault, ds.t_rca);
            const auto ref = tiny_dataset(base, eval);
            const auto zs_ref =
                zscore_series(ref.series.begin()->second, ref.t0, ref.t_fault, ref.t_rca);
            REQUIRE(zs.points.size() == zs_ref.points.size());
            for (std::size_t i = 0; i < zs.points.size(); ++i)
                CHECK(zs.points[i].z == doctest::Approx(zs_ref.points[i].z).epsilon(1e-9));
        }
    }
}

TEST_CASE("anomaly threshold is strict and monotone") {
    // Exact z = 3.0 must not flag; z = 3.1 must.
    const auto at_boundary = tiny_dataset(alternating_baseline(20), {16.0});
    auto report = detect_anomalies(at_boundary, 3.0);
    CHECK_FALSE(report.per_series.begin()->second.is_anomalous);

    const auto above = tiny_dataset(alternating_baseline(20), {16.2});
    report = detect_anomalies(above, 3.0);
    CHECK(report.per_series.begin()->second.is_anomalous);

    // Raising the threshold never adds anomalies.
    const auto loose = detect_anomalies(above, 3.0);
    const auto strict = detect_anomalies(above, 5.0);
    for (const auto& [key, a] : strict.per_series) {
        if (a.is_anomalous) CHECK(loose.per_series.at(key).is_anomalous);
    }
}

TEST_CASE("FRZ equals the set of instances with an anomalous metric") {
    IncidentDataset ds;
    ds.case_id = "frz";
    ds.topology.instances = {{"a", "Microservice"}, {"b", "Microservice"}, {"c", "Microservice"}};
    ds.t0 = 0;
    ds.t_fault = 200;
    ds.t_rca = 209;
    auto flat = alternating_baseline(20);
    auto add = [&](const std::string& inst, double eval_value) {
        std::vector<double> v = flat;
        v.push_back(eval_value);
        ds.series.emplace(SeriesKey{inst, "latency"},
                          testutil::make_series(inst, "latency", 0, 10, v));
    };
    add("a", 30.0);  // anomalous
    add("b", 10.0);  // quiet
    add("c", 30.0);  // anomalous
    const auto report = detect_anomalies(ds);
    const auto frz = compute_frz(ds, report);
    CHECK(frz == std::set<std::string>{"a", "c"});

    // Brute-force cross-check.
    std::set<std::string> brute;
    for (const auto& [key, a] : report.per_series)
        if (a.is_anomalous) brute.insert(key.instance_id);
    CHECK(frz == brute);
}

TEST_CASE("dataset round trip with deduplication and validation") {
    const auto ont = testutil::standard_ontology();
    const auto dir = testutil::fresh_dir("telemetry_load");

    SUBCASE("minimal case loads") {
        IncidentDataset ds;
        ds.case_id = "mini";
        ds.topology.instances = {{"svc_a", "Microservice"}};
        ds.t0 = 100;
        ds.t_fault = 150;
        ds.t_rca = 190;
        ds.series.emplace(
            SeriesKey{"svc_a", "latency"},
            testutil::make_series("svc_a", "latency", 100, 10,
                                  {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
        save_dataset(ds, (dir / "mini").string());
        const auto loaded = load_dataset((dir / "mini").string(), ont);
        CHECK(loaded.series.size() == 1);
        CHECK(loaded.t_fault == 150);
        CHECK(loaded.series.begin()->second.values.size() == 10);
    }

    SUBCASE("metrics row with unknown instance fails by name") {
        testutil::write_file(dir / "bad" / "x", "");  // ensure dir
        std::filesystem::create_directories(dir / "bad");
        testutil::write_file(dir / "bad" / "topology.json",
                             R"({"instances":[{"id":"svc_a","type":"Microservice"}],"edges":[]})");
        testutil::write_file(dir / "bad" / "case.json",
                             R"({"t0":0,"t_F":50,"t_rca":100})");
        testutil::write_file(dir / "bad" / "metrics.csv",
                             "timestamp,instance,metric,value\n10,ghost,latency,1.0\n");
        try {
            load_dataset((dir / "bad").string(), ont);
            FAIL("expected validation error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("ghost") != std::string::npos);
        }
    }

    SUBCASE("duplicate timestamps keep the last write and count") {
        std::filesystem::create_directories(dir / "dup");
        testutil::write_file(dir / "dup" / "topology.json",
                             R"({"instances":[{"id":"svc_a","type":"Microservice"}],"edges":[]})");
        testutil::write_file(dir / "dup" / "case.json", R"({"t0":0,"t_F":50,"t_rca":100})");
        testutil::write_file(dir / "dup" / "metrics.csv",
                             "timestamp,instance,metric,value\n"
                             "10,svc_a,latency,1.0\n10,svc_a,latency,2.0\n20,svc_a,latency,3.0\n");
        const auto loaded = load_dataset((dir / "dup").string(), ont);
        CHECK(loaded.dedup_count == 1);
        CHECK(loaded.series.begin()->second.values[0] == 2.0);
    }

    SUBCASE("time ordering violation is rejected") {
        std::filesystem::create_directories(dir / "order");
        testutil::write_file(dir / "order" / "topology.json",
                             R"({"instances":[{"id":"svc_a","type":"Microservice"}],"edges":[]})");
        testutil::write_file(dir / "order" / "case.json", R"({"t0":100,"t_F":50,"t_rca":200})");
        testutil::write_file(dir / "order" / "metrics.csv", "timestamp,instance,metric,value\n");
        CHECK_THROWS_AS(load_dataset((dir / "order").string(), ont), ValidationError);
    }
}
