#include "metarca/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "metarca/errors.hpp"

namespace metarca::sim {

namespace fs = std::filesystem;
using nlohmann::json;
using telemetry::SeriesKey;

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_range(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int Rng::uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
}

double Rng::normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double Rng::trunc_normal(double limit) {
    for (;;) {
        const double z = normal();
        if (std::abs(z) <= limit) return z;
    }
}

std::string to_string(TopologyShape shape) {
    switch (shape) {
        case TopologyShape::Chain: return "chain";
        case TopologyShape::Tree: return "tree";
        case TopologyShape::RandomDag: return "random_dag";
    }
    return "random_dag";
}

std::string to_string(FaultType type) {
    switch (type) {
        case FaultType::TpsSurge: return "tps_surge";
        case FaultType::CpuOverload: return "cpu_overload";
        case FaultType::DbLatency: return "db_latency";
    }
    return "tps_surge";
}

TopologyShape topology_shape_from_string(const std::string& s) {
    if (s == "chain") return TopologyShape::Chain;
    if (s == "tree") return TopologyShape::Tree;
    if (s == "random_dag") return TopologyShape::RandomDag;
    throw ParseError("unknown topology shape '" + s + "'");
}

FaultType fault_type_from_string(const std::string& s) {
    if (s == "tps_surge") return FaultType::TpsSurge;
    if (s == "cpu_overload") return FaultType::CpuOverload;
    if (s == "db_latency") return FaultType::DbLatency;
    throw ParseError("unknown fault type '" + s + "'");
}

void SimConfig::validate() const {
    if (n_services < 1) throw ValidationError("sim config: n_services must be >= 1");
    if (fault.types.empty()) throw ValidationError("sim config: fault.types must be non-empty");
    if (fault.magnitude_sigma < 3.0)
        throw ValidationError("sim config: magnitude_sigma must be >= 3");
    if (!(propagation.weight_min > 0.0 && propagation.weight_min <= propagation.weight_max &&
          propagation.weight_max <= 1.0))
        throw ValidationError("sim config: weight range must satisfy 0 < min <= max <= 1");
    if (!(propagation.lag_min >= 1 && propagation.lag_min <= propagation.lag_max))
        throw ValidationError("sim config: lag range must satisfy 1 <= min <= max");
    if (propagation.noise_sigma < 0.0)
        throw ValidationError("sim config: noise_sigma must be non-negative");
    if (sampling.n_baseline < 30)
        throw ValidationError("sim config: n_baseline must be >= 30");
    if (sampling.n_fault < 5) throw ValidationError("sim config: n_fault must be >= 5");
    if (sampling.interval_seconds < 1)
        throw ValidationError("sim config: interval_seconds must be >= 1");
}

namespace {

constexpr double kNoiseClip = 2.5;  // baseline noise stays below the 3-sigma gate
constexpr Timestamp kEpochBase = 1754000000;

struct MetricProfile {
    const char* name;
    double mean;
    double unit;
};

const std::vector<MetricProfile>& service_metrics() {
    static const std::vector<MetricProfile> m = {{"latency", 100.0, 5.0},
                                                 {"tps", 500.0, 25.0},
                                                 {"cpu_utilization", 40.0, 2.0},
                                                 {"error_rate", 1.0, 0.1},
                                                 {"memory_usage", 60.0, 2.0}};
    return m;
}

const std::vector<MetricProfile>& db_metrics() {
    static const std::vector<MetricProfile> m = {{"db_time", 50.0, 3.0}, {"qps", 300.0, 15.0}};
    return m;
}

std::string service_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "svc%03d", i);
    return buf;
}

std::string db_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "db%03d", i);
    return buf;
}

struct TopologyPlan {
    telemetry::Topology topology;
    std::vector<std::string> services;
    std::vector<std::string> dbs;
    std::map<std::string, std::vector<std::string>> invoke_children;  // svc -> svc
    std::map<std::string, std::vector<std::string>> invoke_parents;   // svc -> callers
    std::map<std::string, std::vector<std::string>> db_callers;       // db -> svc
    std::map<std::string, std::vector<std::string>> svc_dbs;          // svc -> db
};

TopologyPlan build_topology(const SimConfig& config, Rng& rng) {
    TopologyPlan plan;
    const int n = config.n_services;
    for (int i = 1; i <= n; ++i) {
        plan.services.push_back(service_id(i));
        plan.topology.instances.push_back({service_id(i), "Microservice"});
    }

    auto add_invoke = [&](const std::string& src, const std::string& dst) {
        plan.topology.edges.push_back({src, dst, ontology::ConnType::Invoke});
        plan.invoke_children[src].push_back(dst);
        plan.invoke_parents[dst].push_back(src);
    };

    switch (config.topology_shape) {
        case TopologyShape::Chain:
            for (int i = 1; i < n; ++i) add_invoke(service_id(i), service_id(i + 1));
            break;
        case TopologyShape::Tree:
            for (int i = 2; i <= n; ++i)
                add_invoke(service_id(rng.uniform_int(1, i - 1)), service_id(i));
            break;
        case TopologyShape::RandomDag:
            for (int i = 2; i <= n; ++i) {
                const int first = rng.uniform_int(1, i - 1);
                add_invoke(service_id(first), service_id(i));
                if (i > 2 && rng.uniform() < 0.3) {
                    int second = rng.uniform_int(1, i - 1);
                    if (second == first) second = (second % (i - 1)) + 1;
                    if (second != first) add_invoke(service_id(second), service_id(i));
                }
            }
            break;
    }

    const int n_db = std::max(1, n / 10);
    for (int d = 1; d <= n_db; ++d) {
        const std::string db = db_id(d);
        plan.dbs.push_back(db);
        plan.topology.instances.push_back({db, "MySQL"});
        const int caller_count = rng.uniform_int(1, std::min(3, n));
        std::set<int> callers;
        while (static_cast<int>(callers.size()) < caller_count)
            callers.insert(rng.uniform_int(1, n));
        for (int c : callers) {
            const std::string svc = service_id(c);
            plan.topology.edges.push_back({svc, db, ontology::ConnType::Invoke});
            plan.db_callers[db].push_back(svc);
            plan.svc_dbs[svc].push_back(db);
        }
    }
    return plan;
}

struct CascadePlan {
    std::vector<PlantedEdge> edges;
    telemetry::GroundTruth ground_truth;
};

// The planted cascade is a tree: each node has at most one planted in-edge,
// and propagation stops once the attenuated signal falls below the cascade
// floor. Both choices keep per-hop attenuation strict and planted lags
// sharply recoverable.
struct Planter {
    std::vector<PlantedEdge>& edges;
    Rng& rng;
    const PropagationSpec& prop;
    std::set<SeriesKey> claimed;
    std::map<SeriesKey, double> level;

    void seed_root(const SeriesKey& root, double magnitude) {
        claimed.insert(root);
        level[root] = magnitude;
    }

    bool plant(const SeriesKey& cause, const SeriesKey& effect) {
        if (claimed.count(effect)) return false;
        const double w = rng.uniform_range(prop.weight_min, prop.weight_max);
        const int lag = rng.uniform_int(prop.lag_min, prop.lag_max);
        const double effect_level = level.at(cause) * w;
        if (effect_level < prop.cascade_floor_sigma) return false;
        claimed.insert(effect);
        level[effect] = effect_level;
        PlantedEdge e;
        e.cause = cause;
        e.effect = effect;
        e.weight = w;
        e.lag = lag;
        edges.push_back(std::move(e));
        return true;
    }
};

// Upward SLI cascade: each anomalous callee degrades its callers' latency.
void cascade_latency_up(const TopologyPlan& plan, const std::string& start_service,
                        Planter& planter) {
    std::deque<std::string> queue{start_service};
    std::set<std::string> visited{start_service};
    while (!queue.empty()) {
        const std::string svc = queue.front();
        queue.pop_front();
        auto it = plan.invoke_parents.find(svc);
        if (it == plan.invoke_parents.end()) continue;
        for (const std::string& caller : it->second) {
            if (planter.plant({svc, "latency"}, {caller, "latency"}) &&
                visited.insert(caller).second)
                queue.push_back(caller);
        }
    }
}

std::string pick_target(const std::vector<std::string>& candidates, const FaultSpec& fault,
                        Rng& rng) {
    if (!fault.target_instance.empty()) {
        if (std::find(candidates.begin(), candidates.end(), fault.target_instance) ==
            candidates.end())
            throw ValidationError("sim config: target instance '" + fault.target_instance +
                                  "' does not carry the fault metric");
        return fault.target_instance;
    }
    return candidates[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(candidates.size()) - 1))];
}

CascadePlan build_cascade(const SimConfig& config, const TopologyPlan& plan, FaultType type,
                          Rng& rng) {
    CascadePlan cascade;
    Planter planter{cascade.edges, rng, config.propagation, {}, {}};
    const double magnitude = config.fault.magnitude_sigma;

    switch (type) {
        case FaultType::TpsSurge: {
            const std::string root = pick_target(plan.services, config.fault, rng);
            cascade.ground_truth = {root, "tps"};
            planter.seed_root({root, "tps"}, magnitude);
            // Load travels caller -> callee; every loaded service sees its
            // own latency rise.
            std::deque<std::string> queue{root};
            std::set<std::string> visited{root};
            planter.plant({root, "tps"}, {root, "latency"});
            while (!queue.empty()) {
                const std::string svc = queue.front();
                queue.pop_front();
                auto ch = plan.invoke_children.find(svc);
                if (ch != plan.invoke_children.end()) {
                    for (const std::string& callee : ch->second) {
                        if (!planter.plant({svc, "tps"}, {callee, "tps"})) continue;
                        if (visited.insert(callee).second) {
                            planter.plant({callee, "tps"}, {callee, "latency"});
                            queue.push_back(callee);
                        }
                    }
                }
                auto dbs = plan.svc_dbs.find(svc);
                if (dbs != plan.svc_dbs.end()) {
                    for (const std::string& db : dbs->second) {
                        if (planter.plant({svc, "tps"}, {db, "qps"}))
                            planter.plant({db, "qps"}, {db, "db_time"});
                    }
                }
            }
            break;
        }
        case FaultType::CpuOverload: {
            const std::string root = pick_target(plan.services, config.fault, rng);
            cascade.ground_truth = {root, "cpu_utilization"};
            planter.seed_root({root, "cpu_utilization"}, magnitude);
            planter.plant({root, "cpu_utilization"}, {root, "latency"});
            cascade_latency_up(plan, root, planter);
            break;
        }
        case FaultType::DbLatency: {
            const std::string root = pick_target(plan.dbs, config.fault, rng);
            cascade.ground_truth = {root, "db_time"};
            planter.seed_root({root, "db_time"}, magnitude);
            for (const std::string& caller : plan.db_callers.at(root)) {
                if (planter.plant({root, "db_time"}, {caller, "latency"}))
                    cascade_latency_up(plan, caller, planter);
            }
            break;
        }
    }
    return cascade;
}

// Resolve each planted edge to its meta-edge and check coverage.
void attach_meta_keys(const ontology::MetadataOntology& ontology, const TopologyPlan& plan,
                      std::vector<PlantedEdge>& edges, const mcg::MetaCausalGraph* graph) {
    std::map<std::string, std::string> type_of;
    for (const auto& inst : plan.topology.instances)
        type_of[inst.instance_id] = inst.component_type;

    for (auto& e : edges) {
        const std::string& ct = type_of.at(e.cause.instance_id);
        const std::string& et = type_of.at(e.effect.instance_id);
        std::optional<ontology::ConnectionPattern> pattern;
        if (e.cause.instance_id == e.effect.instance_id) {
            pattern = ontology.match_pattern(ct, ct, ontology::ConnType::Internal);
        } else {
            pattern = ontology.match_pattern(ct, et, ontology::ConnType::Invoke);
            if (!pattern) pattern = ontology.match_pattern(et, ct, ontology::ConnType::Invoke);
        }
        if (!pattern)
            throw ValidationError("simulator: no connection pattern covers " + ct + " -> " + et);
        e.meta_key = mcg::MetaEdgeKey{ontology::MetaNode{ct, e.cause.metric_name},
                                      ontology::MetaNode{et, e.effect.metric_name},
                                      pattern->id()};
        if (graph && !graph->find_edge(e.meta_key))
            throw ValidationError("simulator: MCG lacks meta-edge " + e.meta_key.to_string());
    }
}

} // namespace

GroundTruthCase generate_case(const SimConfig& config,
                              const ontology::MetadataOntology& ontology,
                              const mcg::MetaCausalGraph* graph) {
    config.validate();
    Rng rng(config.seed);

    const TopologyPlan plan = build_topology(config, rng);
    const FaultType fault_type =
        config.fault.types[static_cast<std::size_t>(rng.uniform_int(
            0, static_cast<int>(config.fault.types.size()) - 1))];
    CascadePlan cascade = build_cascade(config, plan, fault_type, rng);
    attach_meta_keys(ontology, plan, cascade.edges, graph);

    const int n_baseline = config.sampling.n_baseline;
    const int n_total = n_baseline + config.sampling.n_fault;
    const Timestamp interval = config.sampling.interval_seconds;
    const Timestamp t0 = kEpochBase;

    GroundTruthCase out;
    out.dataset.case_id = "sim_seed_" + std::to_string(config.seed);
    out.dataset.topology = plan.topology;
    out.dataset.t0 = t0;
    out.dataset.t_fault = t0 + static_cast<Timestamp>(n_baseline) * interval;
    out.dataset.t_rca = t0 + static_cast<Timestamp>(n_total - 1) * interval;
    out.dataset.ground_truth = cascade.ground_truth;
    out.planted_edges = cascade.edges;

    // Normalized fault deviation per planted node, computed in topological
    // order; baseline segments stay at zero.
    std::map<SeriesKey, std::vector<double>> fault_signal;
    const SeriesKey root_key{cascade.ground_truth.root_service, cascade.ground_truth.root_metric};
    {
        auto& f = fault_signal[root_key];
        f.assign(static_cast<std::size_t>(n_total), 0.0);
        for (int i = n_baseline; i < n_total; ++i)
            f[static_cast<std::size_t>(i)] = config.fault.magnitude_sigma +
                                             config.propagation.fault_wander_sigma *
                                                 rng.trunc_normal(kNoiseClip);
    }

    std::map<SeriesKey, std::vector<const PlantedEdge*>> in_edges;
    std::map<SeriesKey, int> pending;
    for (const auto& e : cascade.edges) {
        in_edges[e.effect].push_back(&e);
        pending.emplace(e.effect, 0);
        pending.emplace(e.cause, 0);
    }
    for (const auto& e : cascade.edges) ++pending[e.effect];

    std::deque<SeriesKey> ready;
    for (const auto& [key, deg] : pending)
        if (deg == 0) ready.push_back(key);
    std::vector<SeriesKey> topo_order;
    while (!ready.empty()) {
        const SeriesKey key = ready.front();
        ready.pop_front();
        topo_order.push_back(key);
        for (const auto& e : cascade.edges) {
            if (e.cause != key) continue;
            if (--pending[e.effect] == 0) ready.push_back(e.effect);
        }
    }

    for (const SeriesKey& key : topo_order) {
        if (key == root_key) continue;
        auto it = in_edges.find(key);
        if (it == in_edges.end()) continue;
        auto& f = fault_signal[key];
        f.assign(static_cast<std::size_t>(n_total), 0.0);
        const double indeg = static_cast<double>(it->second.size());
        for (const PlantedEdge* e : it->second) {
            const auto& cause_f = fault_signal[e->cause];
            for (int i = 0; i < n_total; ++i) {
                const int j = i - e->lag;
                const double upstream =
                    (j >= 0 && !cause_f.empty()) ? cause_f[static_cast<std::size_t>(j)] : 0.0;
                f[static_cast<std::size_t>(i)] +=
                    (e->weight * upstream +
                     config.propagation.noise_sigma * rng.trunc_normal(kNoiseClip)) /
                    indeg;
            }
        }
    }

    // Emit series in sorted key order so the draw sequence is reproducible.
    std::vector<std::pair<SeriesKey, MetricProfile>> series_specs;
    for (const auto& inst : plan.topology.instances) {
        const auto& metrics =
            inst.component_type == "Microservice" ? service_metrics() : db_metrics();
        for (const auto& m : metrics)
            series_specs.push_back({SeriesKey{inst.instance_id, m.name}, m});
    }
    std::sort(series_specs.begin(), series_specs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    for (const auto& [key, profile] : series_specs) {
        telemetry::MetricSeries s;
        s.instance_id = key.instance_id;
        s.metric_name = key.metric_name;
        const auto fit = fault_signal.find(key);
        for (int i = 0; i < n_total; ++i) {
            const double f =
                fit == fault_signal.end() ? 0.0 : fit->second[static_cast<std::size_t>(i)];
            const double z = rng.trunc_normal(kNoiseClip) + f;
            s.timestamps.push_back(t0 + static_cast<Timestamp>(i) * interval);
            s.values.push_back(profile.mean + profile.unit * z);
        }
        out.dataset.series.emplace(key, std::move(s));
    }
    return out;
}

std::vector<CorpusManifestEntry> generate_corpus(const SimConfig& config_template, int n_cases,
                                                 std::uint64_t corpus_seed,
                                                 const std::string& out_dir,
                                                 const ontology::MetadataOntology& ontology,
                                                 const mcg::MetaCausalGraph* graph) {
    if (n_cases < 0) throw ValidationError("corpus size must be non-negative");
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create corpus directory " + out_dir + ": " + ec.message());

    std::vector<CorpusManifestEntry> manifest;
    for (int i = 0; i < n_cases; ++i) {
        SimConfig config = config_template;
        config.seed = corpus_seed * 1000003ull + static_cast<std::uint64_t>(i);
        config.fault.types = {config_template.fault.types[static_cast<std::size_t>(i) %
                                                          config_template.fault.types.size()]};
        GroundTruthCase gt_case = generate_case(config, ontology, graph);

        char name[32];
        std::snprintf(name, sizeof(name), "case_%03d", i);
        gt_case.dataset.case_id = name;
        telemetry::save_dataset(gt_case.dataset, (root / name).string());

        manifest.push_back({name, config.seed, *gt_case.dataset.ground_truth});
    }

    json doc;
    doc["cases"] = json::array();
    for (const auto& entry : manifest)
        doc["cases"].push_back({{"id", entry.case_id},
                                {"seed", entry.seed},
                                {"ground_truth",
                                 {{"service", entry.ground_truth.root_service},
                                  {"metric", entry.ground_truth.root_metric}}}});
    std::ofstream out(root / "manifest.json");
    if (!out) throw IoError("cannot write corpus manifest under " + out_dir);
    out << doc.dump(2) << "\n";
    return manifest;
}

SimConfig load_sim_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open sim config: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("sim config parse error: ") + e.what());
    }
    SimConfig config;
    try {
        config.seed = doc.value("seed", config.seed);
        config.n_services = doc.value("n_services", config.n_services);
        if (doc.contains("topology_shape"))
            config.topology_shape =
                topology_shape_from_string(doc["topology_shape"].get<std::string>());
        config.ontology_path = doc.value("ontology", "");
        if (doc.contains("fault")) {
            const auto& jf = doc["fault"];
            config.fault.target_rule = jf.value("target_rule", config.fault.target_rule);
            config.fault.target_instance =
                jf.value("target_instance", config.fault.target_instance);
            config.fault.magnitude_sigma =
                jf.value("magnitude_sigma", config.fault.magnitude_sigma);
            if (jf.contains("types")) {
                config.fault.types.clear();
                for (const auto& t : jf["types"])
                    config.fault.types.push_back(fault_type_from_string(t.get<std::string>()));
            } else if (jf.contains("type")) {
                config.fault.types = {fault_type_from_string(jf["type"].get<std::string>())};
            }
        }
        if (doc.contains("propagation")) {
            const auto& jp = doc["propagation"];
            config.propagation.weight_min = jp.value("weight_min", config.propagation.weight_min);
            config.propagation.weight_max = jp.value("weight_max", config.propagation.weight_max);
            config.propagation.lag_min = jp.value("lag_min", config.propagation.lag_min);
            config.propagation.lag_max = jp.value("lag_max", config.propagation.lag_max);
            config.propagation.noise_sigma =
                jp.value("noise_sigma", config.propagation.noise_sigma);
            config.propagation.fault_wander_sigma =
                jp.value("fault_wander_sigma", config.propagation.fault_wander_sigma);
            config.propagation.cascade_floor_sigma =
                jp.value("cascade_floor_sigma", config.propagation.cascade_floor_sigma);
        }
        if (doc.contains("sampling")) {
            const auto& js = doc["sampling"];
            config.sampling.interval_seconds =
                js.value("interval_seconds", config.sampling.interval_seconds);
            config.sampling.n_baseline = js.value("n_baseline", config.sampling.n_baseline);
            config.sampling.n_fault = js.value("n_fault", config.sampling.n_fault);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("sim config schema error: ") + e.what());
    }
    config.validate();
    return config;
}

} // namespace metarca::sim
