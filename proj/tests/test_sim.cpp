#include <doctest.h>

#include <filesystem>

#include "metarca/errors.hpp"
#include "metarca/online.hpp"
#include "metarca/sim.hpp"

#include "helpers.hpp"

using namespace metarca;
using namespace metarca::sim;
using telemetry::SeriesKey;

namespace {

SimConfig chain_config(std::uint64_t seed, int n_services) {
    SimConfig config;
    config.seed = seed;
    config.n_services = n_services;
    config.topology_shape = TopologyShape::Chain;
    config.fault.types = {FaultType::TpsSurge};
    config.fault.magnitude_sigma = 6.0;
    config.propagation.weight_min = 0.9;
    config.propagation.weight_max = 0.9;
    config.propagation.lag_min = 1;
    config.propagation.lag_max = 1;
    config.propagation.noise_sigma = 0.05;
    return config;
}

} // namespace

TEST_CASE("generation is deterministic in the seed") {
    const auto ont = testutil::standard_ontology();
    const auto dir = testutil::fresh_dir("sim_determinism");
    const SimConfig config = chain_config(42, 5);

    auto a = generate_case(config, ont);
    auto b = generate_case(config, ont);
    a.dataset.case_id = b.dataset.case_id = "same";
    telemetry::save_dataset(a.dataset, (dir / "a").string());
    telemetry::save_dataset(b.dataset, (dir / "b").string());
    CHECK(testutil::read_file(dir / "a" / "metrics.csv") ==
          testutil::read_file(dir / "b" / "metrics.csv"));
    CHECK(testutil::read_file(dir / "a" / "topology.json") ==
          testutil::read_file(dir / "b" / "topology.json"));
    CHECK(testutil::read_file(dir / "a" / "case.json") ==
          testutil::read_file(dir / "b" / "case.json"));
}

TEST_CASE("three-service chain surge cascades with one-sample leads") {
    const auto ont = testutil::standard_ontology();
    SimConfig config = chain_config(7, 3);
    config.fault.target_instance = "svc001";  // fault at the chain head
    config.propagation.fault_wander_sigma = 0.3;
    const auto gt_case = generate_case(config, ont);
    const auto& ds = gt_case.dataset;
    REQUIRE(ds.ground_truth.has_value());
    CHECK(ds.ground_truth->root_service == "svc001");
    CHECK(ds.ground_truth->root_metric == "tps");

    const auto report = telemetry::detect_anomalies(ds);
    std::vector<std::string> services = {"svc001", "svc002", "svc003"};
    std::vector<int> onset;
    for (const auto& svc : services) {
        CHECK(report.per_series.at(SeriesKey{svc, "latency"}).is_anomalous);
        // First evaluation sample whose z crosses the threshold.
        const auto& series = ds.series.at(SeriesKey{svc, "latency"});
        const auto zs = telemetry::zscore_series(series, ds.t0, ds.t_fault, ds.t_rca);
        int first = -1;
        for (std::size_t i = 0; i < zs.points.size(); ++i) {
            if (std::abs(zs.points[i].z) > 3.0) {
                first = static_cast<int>(i);
                break;
            }
        }
        REQUIRE(first >= 0);
        onset.push_back(first);
    }
    // Head leads; onset grows along the chain by the planted lags.
    CHECK(onset[0] < onset[1]);
    CHECK(onset[1] < onset[2]);
}

TEST_CASE("fault target selection honors the configured rule") {
    // The chain head is not hard-coded: at n=1 the only instance is chosen.
    const auto ont = testutil::standard_ontology();
    SimConfig config = chain_config(3, 1);
    const auto gt_case = generate_case(config, ont);
    CHECK(gt_case.dataset.ground_truth->root_service == "svc001");
    const auto report = telemetry::detect_anomalies(gt_case.dataset);
    const auto frz = telemetry::compute_frz(gt_case.dataset, report);
    CHECK(frz.count("svc001") == 1);
}

TEST_CASE("generated cases pass dataset validation unmodified") {
    const auto ont = testutil::standard_ontology();
    const auto dir = testutil::fresh_dir("sim_validate");
    SimConfig config;
    config.seed = 99;
    config.n_services = 12;
    config.topology_shape = TopologyShape::RandomDag;
    const auto entries = generate_corpus(config, 5, 99, (dir / "corpus").string(), ont);
    CHECK(entries.size() == 5);
    for (const auto& entry : entries) {
        const auto loaded =
            telemetry::load_dataset((dir / "corpus" / entry.case_id).string(), ont);
        CHECK(loaded.ground_truth.has_value());
        CHECK(loaded.ground_truth->root_service == entry.ground_truth.root_service);
        CHECK(loaded.series.size() >= 12 * 5);
    }
    CHECK(std::filesystem::exists(dir / "corpus" / "manifest.json"));
}

TEST_CASE("empty corpus writes a manifest and nothing else") {
    const auto ont = testutil::standard_ontology();
    const auto dir = testutil::fresh_dir("sim_empty");
    const auto entries = generate_corpus(chain_config(1, 3), 0, 1, (dir / "corpus").string(), ont);
    CHECK(entries.empty());
    CHECK(std::filesystem::exists(dir / "corpus" / "manifest.json"));
    std::size_t case_dirs = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "corpus"))
        if (e.is_directory()) ++case_dirs;
    CHECK(case_dirs == 0);
}

TEST_CASE("planted fault node attains the case-wide max z") {
    const auto ont = testutil::standard_ontology();
    int root_is_max = 0;
    const int cases = 20;
    for (int i = 0; i < cases; ++i) {
        SimConfig config;
        config.seed = 500 + static_cast<std::uint64_t>(i);
        config.n_services = 10;
        config.topology_shape = TopologyShape::RandomDag;
        config.fault.magnitude_sigma = 6.0;
        const auto gt_case = generate_case(config, ont);
        const auto report = telemetry::detect_anomalies(gt_case.dataset);
        const SeriesKey root{gt_case.dataset.ground_truth->root_service,
                             gt_case.dataset.ground_truth->root_metric};
        double best = -1.0;
        SeriesKey best_key;
        for (const auto& [key, a] : report.per_series) {
            if (a.max_abs_z > best) {
                best = a.max_abs_z;
                best_key = key;
            }
        }
        if (best_key == root) ++root_is_max;
    }
    CHECK(root_is_max >= 18);  // >= 90 percent
}

TEST_CASE("planted lags are recoverable from the evaluation window") {
    const auto ont = testutil::standard_ontology();
    int recovered = 0, total = 0;
    for (int i = 0; i < 10; ++i) {
        SimConfig config;
        config.seed = 900 + static_cast<std::uint64_t>(i);
        config.n_services = 8;
        config.topology_shape = TopologyShape::RandomDag;
        config.propagation.noise_sigma = 0.1;
        const auto gt_case = generate_case(config, ont);
        const auto& ds = gt_case.dataset;
        for (const auto& planted : gt_case.planted_edges) {
            auto window = [&](const SeriesKey& key) {
                std::vector<double> v;
                const auto& s = ds.series.at(key);
                for (std::size_t j = 0; j < s.timestamps.size(); ++j)
                    if (s.timestamps[j] >= ds.t_fault) v.push_back(s.values[j]);
                return v;
            };
            const auto lc =
                online::lagged_correlation(window(planted.cause), window(planted.effect), 5);
            ++total;
            if (lc.best_lag == planted.lag) ++recovered;
        }
    }
    CHECK(total > 0);
    CHECK(static_cast<double>(recovered) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("planted edges correspond to MCG meta edges when one is supplied") {
    const auto ont = testutil::standard_ontology();
    const auto specs = mcg::load_bootstrap_edges(
        (testutil::fixtures_dir() / "bootstrap_edges.json").string());
    const auto graph = mcg::bootstrap_skeleton(ont, specs, {0.5, 0.05, 0.005, 0.5}, 0);

    SimConfig config;
    config.seed = 1234;
    config.n_services = 10;
    config.topology_shape = TopologyShape::RandomDag;
    const auto gt_case = generate_case(config, ont, &graph);
    for (const auto& planted : gt_case.planted_edges)
        CHECK(graph.find_edge(planted.meta_key) != nullptr);

    // A graph missing the needed meta edges is named in the error.
    const auto bare = mcg::bootstrap_skeleton(ont, {}, {0.5, 0.05, 0.005, 0.5}, 0);
    CHECK_THROWS_AS(generate_case(config, ont, &bare), ValidationError);
}

TEST_CASE("sim config validation catches malformed ranges") {
    SimConfig config = chain_config(1, 3);
    config.propagation.weight_min = 0.0;
    CHECK_THROWS_AS(config.validate(), ValidationError);
    config = chain_config(1, 3);
    config.propagation.lag_min = 0;
    CHECK_THROWS_AS(config.validate(), ValidationError);
    config = chain_config(1, 3);
    config.sampling.n_baseline = 10;
    CHECK_THROWS_AS(config.validate(), ValidationError);
    config = chain_config(1, 3);
    config.fault.magnitude_sigma = 2.0;
    CHECK_THROWS_AS(config.validate(), ValidationError);
}
