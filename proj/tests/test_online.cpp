#include <doctest.h>

#include <cmath>

#include "metarca/errors.hpp"
#include "metarca/online.hpp"
#include "metarca/sim.hpp"

#include "helpers.hpp"

using namespace metarca;
using namespace metarca::online;
using evidence::EvidenceKind;
using evidence::EvidenceRecord;
using telemetry::SeriesKey;
using telemetry::Timestamp;

namespace {

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

LicgNode make_node(const std::string& inst, const std::string& metric, double anomaly_score,
                   double z = 0.0) {
    LicgNode n;
    n.instance_id = inst;
    n.metric_name = metric;
    n.anomaly_score = anomaly_score;
    n.max_abs_z = z;
    return n;
}

LicgEdge make_edge(const SeriesKey& cause, const SeriesKey& effect, double w) {
    LicgEdge e;
    e.cause = cause;
    e.effect = effect;
    e.w_mcg = w;
    e.w_licg = w;
    return e;
}

} // namespace

TEST_CASE("anomaly co-occurrence is the min of node sigmoids") {
    CHECK(anomaly_cooccurrence(0.0, 0.0) == 0.5);
    CHECK(anomaly_cooccurrence(3.0, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(anomaly_cooccurrence(3.0, 3.0) == doctest::Approx(0.9525741268).epsilon(1e-9));
    CHECK(anomaly_cooccurrence(50.0, 50.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lagged correlation recovers exact shifts") {
    sim::Rng rng(17);
    std::vector<double> u(60), v(60, 0.0);
    for (auto& x : u) x = rng.normal();
    for (std::size_t i = 2; i < v.size(); ++i) v[i] = u[i - 2];

    SUBCASE("shifted copy gives correlation 1 at the planted lag") {
        const auto lc = lagged_correlation(u, v, 5);
        CHECK(lc.s_corr == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(lc.best_lag == 2);
    }

    SUBCASE("negated series still correlates via the absolute value") {
        std::vector<double> neg(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) neg[i] = -u[i];
        const auto lc = lagged_correlation(u, neg, 5);
        CHECK(lc.s_corr == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(lc.best_lag == 0);
    }

    SUBCASE("constant cause yields zero correlation") {
        const std::vector<double> flat(60, 7.0);
        const auto lc = lagged_correlation(flat, v, 5);
        CHECK(lc.s_corr == 0.0);
    }

    SUBCASE("insufficient overlap yields zero with a flag") {
        const std::vector<double> shorty(6, 1.0);
        const auto lc = lagged_correlation(shorty, shorty, 5);
        CHECK_FALSE(lc.sufficient);
        CHECK(lc.s_corr == 0.0);
    }
}

TEST_CASE("fusion arithmetic and pruning threshold") {
    Licg licg;
    licg.nodes = {make_node("a", "m", 0.95), make_node("b", "m", 0.9)};
    LicgEdge e = make_edge({"a", "m"}, {"b", "m"}, 0.62);
    e.s_anomaly = 0.95;
    e.s_corr = 0.9;
    licg.edges = {e};

    SUBCASE("edge above the threshold survives with the fused weight") {
        const Licg out = fuse_and_prune(licg, 0.3);
        REQUIRE(out.edges.size() == 1);
        CHECK(out.edges[0].w_licg == doctest::Approx(0.62 * 0.95 * 0.9).epsilon(1e-12));
    }

    SUBCASE("default threshold prunes the weak edge") {
        licg.edges[0].w_mcg = 0.5;
        licg.edges[0].s_anomaly = 0.5;
        licg.edges[0].s_corr = 1.0;
        const Licg out = fuse_and_prune(licg, 0.3);
        CHECK(out.edges.empty());
        CHECK(out.nodes.size() == 2);  // isolated nodes stay
    }

    SUBCASE("zero threshold prunes nothing") {
        licg.edges[0].s_corr = 0.0;
        const Licg out = fuse_and_prune(licg, 0.0);
        CHECK(out.edges.size() == 1);
    }
}

TEST_CASE("CCB reproduces hand-solved fixed points") {
    SUBCASE("single node keeps its anomaly score") {
        Licg licg;
        licg.nodes = {make_node("u", "m", 0.8)};
        const auto ranked = ccb_rank(licg);
        REQUIRE(ranked.entries.size() == 1);
        CHECK(ranked.entries[0].score == doctest::Approx(0.8).epsilon(1e-9));
        CHECK(ranked.converged);
    }

    SUBCASE("two-node chain") {
        Licg licg;
        licg.nodes = {make_node("u", "m", 0.5), make_node("v", "m", 0.5)};
        licg.edges = {make_edge({"u", "m"}, {"v", "m"}, 0.5)};
        const auto ranked = ccb_rank(licg);
        REQUIRE(ranked.entries.size() == 2);
        CHECK(ranked.entries[0].instance_id == "u");
        CHECK(ranked.entries[0].score == doctest::Approx(0.75).epsilon(1e-9));
        CHECK(ranked.entries[1].score == doctest::Approx(0.5).epsilon(1e-9));
    }

    SUBCASE("three-node fan-in") {
        Licg licg;
        licg.nodes = {make_node("u", "m", 0.5), make_node("v", "m", 0.5),
                      make_node("w", "m", 0.5)};
        licg.edges = {make_edge({"u", "m"}, {"w", "m"}, 0.4),
                      make_edge({"v", "m"}, {"w", "m"}, 0.6)};
        const auto ranked = ccb_rank(licg);
        REQUIRE(ranked.entries.size() == 3);
        CHECK(ranked.entries[0].instance_id == "v");
        CHECK(ranked.entries[0].score == doctest::Approx(0.80).epsilon(1e-9));
        CHECK(ranked.entries[1].instance_id == "u");
        CHECK(ranked.entries[1].score == doctest::Approx(0.70).epsilon(1e-9));
        CHECK(ranked.entries[2].instance_id == "w");
        CHECK(ranked.entries[2].score == doctest::Approx(0.50).epsilon(1e-9));
    }
}

TEST_CASE("CCB order is invariant under uniform anomaly scaling") {
    sim::Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        Licg licg;
        const int n = rng.uniform_int(3, 12);
        for (int i = 0; i < n; ++i)
            licg.nodes.push_back(
                make_node("n" + std::to_string(i), "m", rng.uniform_range(0.1, 1.0)));
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                if (rng.uniform() < 0.3)
                    licg.edges.push_back(make_edge({"n" + std::to_string(i), "m"},
                                                   {"n" + std::to_string(j), "m"},
                                                   rng.uniform_range(0.05, 0.95)));
            }
        }
        const auto base = ccb_rank(licg);
        for (const double c : {0.1, 10.0}) {
            Licg scaled = licg;
            for (auto& node : scaled.nodes) node.anomaly_score *= c;
            const auto ranked = ccb_rank(scaled);
            REQUIRE(ranked.entries.size() == base.entries.size());
            for (std::size_t i = 0; i < base.entries.size(); ++i) {
                CHECK(ranked.entries[i].instance_id == base.entries[i].instance_id);
                CHECK(ranked.entries[i].score ==
                      doctest::Approx(base.entries[i].score * c).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("CCB contracts on cyclic graphs with small row sums") {
    sim::Rng rng(59);
    for (int trial = 0; trial < 20; ++trial) {
        Licg licg;
        const int n = rng.uniform_int(3, 10);
        for (int i = 0; i < n; ++i)
            licg.nodes.push_back(
                make_node("n" + std::to_string(i), "m", rng.uniform_range(0.1, 1.0)));
        // Random digraph including back edges; per-node out-weights are then
        // normalized below 1 so the iteration map is an infinity-norm
        // contraction.
        std::map<int, std::vector<std::size_t>> outs;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j && rng.uniform() < 0.4) {
                    licg.edges.push_back(make_edge({"n" + std::to_string(i), "m"},
                                                   {"n" + std::to_string(j), "m"},
                                                   rng.uniform_range(0.1, 1.0)));
                    outs[i].push_back(licg.edges.size() - 1);
                }
        for (auto& [node, edge_ids] : outs) {
            double sum = 0.0;
            for (auto id : edge_ids) sum += licg.edges[id].w_licg;
            if (sum > 0.7)
                for (auto id : edge_ids) licg.edges[id].w_licg *= 0.7 / sum;
        }
        const auto ranked = ccb_rank(licg, 1e-6, 100);
        CHECK(ranked.converged);
    }
}

TEST_CASE("PageRank comparison ranker") {
    SUBCASE("single node scores 1") {
        Licg licg;
        licg.nodes = {make_node("u", "m", 0.9)};
        const auto ranked = pagerank_rank(licg);
        REQUIRE(ranked.entries.size() == 1);
        CHECK(ranked.entries[0].score == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("chain mass accumulates at the cause") {
        Licg licg;
        licg.nodes = {make_node("u", "m", 0.5), make_node("v", "m", 0.5)};
        licg.edges = {make_edge({"u", "m"}, {"v", "m"}, 0.8)};
        const auto ranked = pagerank_rank(licg);
        REQUIRE(ranked.entries.size() == 2);
        CHECK(ranked.entries[0].instance_id == "u");
        CHECK(ranked.entries[0].score > ranked.entries[1].score);
    }

    SUBCASE("symmetric pair ties") {
        Licg licg;
        licg.nodes = {make_node("u", "m", 0.5), make_node("v", "m", 0.5)};
        licg.edges = {make_edge({"u", "m"}, {"v", "m"}, 0.7),
                      make_edge({"v", "m"}, {"u", "m"}, 0.7)};
        const auto ranked = pagerank_rank(licg);
        CHECK(ranked.entries[0].score == doctest::Approx(ranked.entries[1].score).epsilon(1e-9));
    }
}

namespace {

// Shared fixture: two anomalous services joined by an invoke edge plus a
// database, with an MCG carrying one trained edge.
struct PipelineFixture {
    ontology::MetadataOntology ont = testutil::standard_ontology();
    mcg::MetaCausalGraph graph;
    telemetry::IncidentDataset dataset;

    PipelineFixture() {
        const Timestamp t0 = 1700000000;
        graph = mcg::bootstrap_skeleton(
            ont,
            {
                {{"MySQL", "db_time"}, {"Microservice", "latency"},
                 "Microservice--invoke-->MySQL"},
                {{"Microservice", "latency"}, {"Microservice", "latency"},
                 "Microservice--invoke-->Microservice"},
                {{"Microservice", "tps"}, {"Microservice", "latency"},
                 "Microservice--internal-->Microservice"},
            },
            {0.5, 0.05, 0.005, 0.5}, t0);
        // One fresh case evidence lifts db_time -> latency to CBS 0.622.
        graph.batch_update(ont,
                           {{EvidenceKind::Case, {"MySQL", "db_time"},
                             {"Microservice", "latency"}, t0, "rep"}},
                           t0);

        dataset.case_id = "fixture";
        dataset.topology.instances = {{"svc_a", "Microservice"}, {"db_1", "MySQL"}};
        dataset.topology.edges = {{"svc_a", "db_1", ontology::ConnType::Invoke}};
        dataset.t0 = 0;
        dataset.t_fault = 600;
        dataset.t_rca = 1190;

        sim::Rng rng(5);
        // Fault deviation on the database, lag-2 echo on the service.
        std::vector<double> db_dev(60), lat_dev(60, 0.0);
        for (auto& d : db_dev) d = 8.0 + 1.5 * rng.normal();
        for (std::size_t i = 2; i < lat_dev.size(); ++i)
            lat_dev[i] = 0.9 * db_dev[i - 2] + 0.1 * rng.normal();

        auto emit = [&](const std::string& inst, const std::string& metric,
                        const std::vector<double>& dev) {
            std::vector<double> v;
            for (int i = 0; i < 60; ++i) v.push_back(10.0 + 0.5 * rng.normal());
            for (int i = 0; i < 60; ++i)
                v.push_back(10.0 + 0.5 * rng.normal() + dev[static_cast<std::size_t>(i)]);
            dataset.series.emplace(SeriesKey{inst, metric},
                                   testutil::make_series(inst, metric, 0, 10, v));
        };
        emit("db_1", "db_time", db_dev);
        emit("svc_a", "latency", lat_dev);
    }
};

} // namespace

TEST_CASE("instantiation projects meta edges onto FRZ connections") {
    PipelineFixture fx;
    const auto report = telemetry::detect_anomalies(fx.dataset);
    const auto frz = telemetry::compute_frz(fx.dataset, report);
    CHECK(frz == std::set<std::string>{"svc_a", "db_1"});

    const Licg licg =
        instantiate_licg(fx.graph, fx.ont, fx.dataset.topology, frz, report);
    // Inter-instance projection plus svc_a's internal tps -> latency edge.
    REQUIRE(licg.edges.size() == 2);
    const LicgEdge* cross = nullptr;
    for (const auto& e : licg.edges)
        if (e.cause.instance_id != e.effect.instance_id) cross = &e;
    REQUIRE(cross != nullptr);
    CHECK(cross->cause == SeriesKey{"db_1", "db_time"});
    CHECK(cross->effect == SeriesKey{"svc_a", "latency"});
    CHECK(cross->w_mcg == doctest::Approx(sigmoid(0.5)).epsilon(1e-12));
    CHECK(licg.nodes.size() == 3);

    SUBCASE("FRZ instances without topology edges project nothing between them") {
        telemetry::Topology topo = fx.dataset.topology;
        topo.edges.clear();
        const Licg intra_only = instantiate_licg(fx.graph, fx.ont, topo, frz, report);
        for (const auto& e : intra_only.edges)
            CHECK(e.cause.instance_id == e.effect.instance_id);
    }

    SUBCASE("single instance without internal meta edges yields an empty graph") {
        mcg::MetaCausalGraph bare = mcg::bootstrap_skeleton(
            fx.ont,
            {{{"MySQL", "db_time"}, {"Microservice", "latency"},
              "Microservice--invoke-->MySQL"}},
            {0.5, 0.05, 0.005, 0.5}, 0);
        const Licg solo =
            instantiate_licg(bare, fx.ont, fx.dataset.topology, {"svc_a"}, report);
        CHECK(solo.edges.empty());
        CHECK(solo.nodes.empty());
    }
}

TEST_CASE("product identities hold on every scored edge") {
    PipelineFixture fx;
    const auto report = telemetry::detect_anomalies(fx.dataset);
    const auto frz = telemetry::compute_frz(fx.dataset, report);
    Licg licg = instantiate_licg(fx.graph, fx.ont, fx.dataset.topology, frz, report);
    score_context(licg, fx.dataset, 5);
    const Licg fused = fuse_and_prune(licg, 0.0);
    REQUIRE(!fused.edges.empty());
    for (const auto& e : fused.edges) {
        CHECK(std::abs(e.s_context - e.s_anomaly * e.s_corr) < 1e-12);
        CHECK(std::abs(e.w_licg - e.w_mcg * e.s_anomaly * e.s_corr) < 1e-12);
    }
    // The planted lag between cause and effect windows is recovered.
    CHECK(fused.edges[0].best_lag == 2);
    CHECK(fused.edges[0].s_corr > 0.5);
}

TEST_CASE("pruning is monotone over the threshold grid") {
    PipelineFixture fx;
    const auto report = telemetry::detect_anomalies(fx.dataset);
    const auto frz = telemetry::compute_frz(fx.dataset, report);
    Licg licg = instantiate_licg(fx.graph, fx.ont, fx.dataset.topology, frz, report);
    score_context(licg, fx.dataset, 5);

    std::size_t prev_edges = licg.edges.size() + 1;
    for (double theta = 0.0; theta < 0.95; theta += 0.1) {
        const Licg pruned = fuse_and_prune(licg, theta);
        CHECK(pruned.edges.size() <= prev_edges);
        CHECK(pruned.nodes.size() == licg.nodes.size());
        prev_edges = pruned.edges.size();
    }
}

TEST_CASE("diagnose end to end on the fixture") {
    PipelineFixture fx;
    DiagnoseParams params;
    params.keep_stages = true;
    const auto result = diagnose(fx.graph, fx.ont, fx.dataset, params);
    REQUIRE(result.incident_detected);
    REQUIRE(!result.ranked.entries.empty());
    CHECK(result.ranked.entries[0].instance_id == "db_1");
    CHECK(result.ranked.entries[0].metric_name == "db_time");
    CHECK(result.ranked.service_ranking[0].instance_id == "db_1");
    CHECK(result.timing_seconds >= 0.0);

    SUBCASE("reruns are byte identical") {
        const auto again = diagnose(fx.graph, fx.ont, fx.dataset, params);
        CHECK(ranked_output_text(result, false) == ranked_output_text(again, false));
    }

    SUBCASE("stage artifacts export to DOT") {
        const std::string dot = to_dot(result.pruned, "pruned");
        CHECK(dot.find("digraph") != std::string::npos);
        CHECK(dot.find("db_1.db_time") != std::string::npos);
        // Render-only filter drops lighter edges.
        const std::string filtered = to_dot(result.pruned, "pruned", 2.0);
        CHECK(filtered.find("->") == std::string::npos);
    }

    SUBCASE("no anomalies means no incident") {
        telemetry::IncidentDataset quiet = fx.dataset;
        quiet.series.clear();
        std::vector<double> flat;  // bounded wiggle, |z| stays near 1
        for (int i = 0; i < 120; ++i) flat.push_back(i % 2 == 0 ? 9.5 : 10.5);
        quiet.series.emplace(SeriesKey{"svc_a", "latency"},
                             testutil::make_series("svc_a", "latency", 0, 10, flat));
        const auto none = diagnose(fx.graph, fx.ont, quiet, params);
        CHECK_FALSE(none.incident_detected);
        CHECK(none.ranked.entries.empty());
    }
}

TEST_CASE("both rankers produce full rankings over the same LICG") {
    PipelineFixture fx;
    DiagnoseParams params;
    const auto ccb = diagnose(fx.graph, fx.ont, fx.dataset, params);
    params.ranker = Ranker::PageRank;
    const auto pr = diagnose(fx.graph, fx.ont, fx.dataset, params);
    CHECK(ccb.ranked.entries.size() == pr.ranked.entries.size());
    CHECK(!ccb.ranked.entries.empty());
}
