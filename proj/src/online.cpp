#include "metarca/online.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "metarca/errors.hpp"
#include "metarca/evidence.hpp"

namespace metarca::online {

using nlohmann::json;
using ontology::ConnectionPattern;

namespace {

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

} // namespace

const LicgNode* Licg::find_node(const SeriesKey& key) const {
    for (const auto& n : nodes)
        if (n.instance_id == key.instance_id && n.metric_name == key.metric_name) return &n;
    return nullptr;
}

double anomaly_cooccurrence(double max_abs_z_u, double max_abs_z_v) {
    return std::min(sigmoid(max_abs_z_u), sigmoid(max_abs_z_v));
}

LagCorrelation lagged_correlation(const std::vector<double>& cause,
                                  const std::vector<double>& effect, int k_max) {
    LagCorrelation out;
    const std::size_t n = std::min(cause.size(), effect.size());
    if (n < static_cast<std::size_t>(k_max) + 5) {
        out.sufficient = false;
        return out;
    }
    for (int k = 0; k <= k_max; ++k) {
        const std::size_t m = n - static_cast<std::size_t>(k);
        if (m < 3) break;
        std::vector<double> a(cause.begin(), cause.begin() + static_cast<std::ptrdiff_t>(m));
        std::vector<double> b(effect.begin() + k, effect.begin() + static_cast<std::ptrdiff_t>(n));
        const double rho = std::abs(evidence::pearson(a, b));
        if (rho > out.s_corr) {
            out.s_corr = rho;
            out.best_lag = k;
        }
    }
    return out;
}

Ranker ranker_from_string(const std::string& s) {
    if (s == "ccb") return Ranker::Ccb;
    if (s == "pagerank") return Ranker::PageRank;
    throw ParseError("unknown ranker '" + s + "' (expected ccb|pagerank)");
}

std::string to_string(Ranker ranker) {
    return ranker == Ranker::Ccb ? "ccb" : "pagerank";
}

namespace {

struct EdgeDraft {
    SeriesKey cause;
    SeriesKey effect;
    mcg::MetaEdgeKey meta_key;
    double w_mcg;
};

void keep_strongest(std::map<std::pair<SeriesKey, SeriesKey>, EdgeDraft>& drafts,
                    EdgeDraft draft) {
    if (draft.cause == draft.effect) return;  // instance-level self loop
    const auto key = std::make_pair(draft.cause, draft.effect);
    auto it = drafts.find(key);
    if (it == drafts.end()) {
        drafts.emplace(key, std::move(draft));
    } else if (draft.w_mcg > it->second.w_mcg) {
        it->second = std::move(draft);
    }
}

} // namespace

Licg instantiate_licg(const mcg::MetaCausalGraph& graph,
                      const ontology::MetadataOntology& ontology,
                      const telemetry::Topology& topology, const std::set<std::string>& frz,
                      const telemetry::AnomalyReport& report) {
    Licg licg;
    licg.provenance.mcg_hash = graph.ontology_hash();

    // Duplicate projections (several patterns reaching the same instance
    // metric pair) collapse to the strongest prior.
    std::map<std::pair<SeriesKey, SeriesKey>, EdgeDraft> drafts;

    std::map<std::string, const telemetry::TopologyInstance*> inst_by_id;
    for (const auto& inst : topology.instances) inst_by_id[inst.instance_id] = &inst;

    for (const auto& edge : topology.edges) {
        if (!frz.count(edge.src_instance) || !frz.count(edge.dst_instance)) continue;
        const auto* src = inst_by_id.at(edge.src_instance);
        const auto* dst = inst_by_id.at(edge.dst_instance);
        const auto pattern =
            ontology.match_pattern(src->component_type, dst->component_type, edge.conn_type);
        if (!pattern) {
            licg.notes.push_back("topology edge " + edge.src_instance + "->" +
                                 edge.dst_instance + " matches no connection pattern");
            continue;
        }
        const bool same_type = pattern->src_type == pattern->dst_type;
        for (const mcg::MetaEdge* meta : graph.edges_on_pattern(pattern->id())) {
            const double w = meta->belief();
            if (!same_type) {
                // Types pin each node to one endpoint instance.
                auto pick = [&](const ontology::MetaNode& n) {
                    return n.component_type == src->component_type ? edge.src_instance
                                                                   : edge.dst_instance;
                };
                keep_strongest(drafts,
                               {SeriesKey{pick(meta->key.cause), meta->key.cause.metric_name},
                                SeriesKey{pick(meta->key.effect), meta->key.effect.metric_name},
                                meta->key, w});
            } else {
                // Same-type patterns leave the ends ambiguous at the meta
                // level; project both orientations and let contextual
                // scoring arbitrate.
                keep_strongest(
                    drafts, {SeriesKey{edge.src_instance, meta->key.cause.metric_name},
                             SeriesKey{edge.dst_instance, meta->key.effect.metric_name},
                             meta->key, w});
                keep_strongest(
                    drafts, {SeriesKey{edge.dst_instance, meta->key.cause.metric_name},
                             SeriesKey{edge.src_instance, meta->key.effect.metric_name},
                             meta->key, w});
            }
        }
    }

    for (const std::string& inst_id : frz) {
        auto it = inst_by_id.find(inst_id);
        if (it == inst_by_id.end()) continue;
        const auto internal = ontology.match_pattern(it->second->component_type,
                                                     it->second->component_type,
                                                     ontology::ConnType::Internal);
        if (!internal) continue;
        for (const mcg::MetaEdge* meta : graph.edges_on_pattern(internal->id())) {
            keep_strongest(drafts, {SeriesKey{inst_id, meta->key.cause.metric_name},
                                    SeriesKey{inst_id, meta->key.effect.metric_name}, meta->key,
                                    meta->belief()});
        }
    }

    std::set<SeriesKey> touched_keys;
    std::set<std::string> touched_instances;
    for (const auto& [pair, draft] : drafts) {
        touched_keys.insert(draft.cause);
        touched_keys.insert(draft.effect);
        touched_instances.insert(draft.cause.instance_id);
        touched_instances.insert(draft.effect.instance_id);
    }
    for (const std::string& inst_id : frz) {
        if (!touched_instances.count(inst_id))
            licg.notes.push_back("FRZ instance " + inst_id +
                                 " matches no meta-edge; it contributes nothing");
    }
    for (const auto& key : touched_keys) {
        LicgNode node;
        node.instance_id = key.instance_id;
        node.metric_name = key.metric_name;
        node.max_abs_z = report.max_abs_z(key.instance_id, key.metric_name);
        node.anomaly_score = sigmoid(node.max_abs_z);
        licg.nodes.push_back(std::move(node));
    }
    for (auto& [pair, draft] : drafts) {
        LicgEdge edge;
        edge.cause = draft.cause;
        edge.effect = draft.effect;
        edge.meta_edge_key = draft.meta_key;
        edge.w_mcg = draft.w_mcg;
        edge.w_licg = draft.w_mcg;  // s_anomaly = s_corr = 1 until scored
        licg.edges.push_back(std::move(edge));
    }
    return licg;
}

void score_context(Licg& licg, const telemetry::IncidentDataset& dataset, int k_max) {
    licg.provenance.k_max = k_max;
    licg.provenance.dataset_id = dataset.case_id;

    // Evaluation-window values per node, aligned per edge by timestamp.
    std::map<SeriesKey, std::pair<std::vector<Timestamp>, std::vector<double>>> window;
    for (const auto& node : licg.nodes) {
        const auto* series = dataset.find_series(node.instance_id, node.metric_name);
        auto& slot = window[node.key()];
        if (!series) continue;
        for (std::size_t i = 0; i < series->timestamps.size(); ++i) {
            const Timestamp t = series->timestamps[i];
            if (t < dataset.t_fault || t > dataset.t_rca || std::isnan(series->values[i]))
                continue;
            slot.first.push_back(t);
            slot.second.push_back(series->values[i]);
        }
    }

    std::map<SeriesKey, double> zscore;
    for (const auto& node : licg.nodes) zscore[node.key()] = node.max_abs_z;

    for (auto& edge : licg.edges) {
        edge.s_anomaly = anomaly_cooccurrence(zscore.at(edge.cause), zscore.at(edge.effect));

        const auto& cw = window.at(edge.cause);
        const auto& ew = window.at(edge.effect);
        std::vector<double> a, b;
        std::size_t i = 0, j = 0;
        while (i < cw.first.size() && j < ew.first.size()) {
            if (cw.first[i] < ew.first[j]) {
                ++i;
            } else if (cw.first[i] > ew.first[j]) {
                ++j;
            } else {
                a.push_back(cw.second[i]);
                b.push_back(ew.second[j]);
                ++i;
                ++j;
            }
        }
        const LagCorrelation lc = lagged_correlation(a, b, k_max);
        if (!lc.sufficient)
            licg.notes.push_back("edge " + edge.cause.to_string() + "->" +
                                 edge.effect.to_string() + ": insufficient overlap, s_corr = 0");
        edge.s_corr = lc.s_corr;
        edge.best_lag = lc.best_lag;
        edge.s_context = edge.s_anomaly * edge.s_corr;
        edge.w_licg = edge.w_mcg * edge.s_context;
    }
}

Licg fuse_and_prune(const Licg& licg, double theta_p) {
    Licg out;
    out.nodes = licg.nodes;
    out.provenance = licg.provenance;
    out.provenance.theta_p = theta_p;
    for (const auto& edge : licg.edges) {
        LicgEdge fused = edge;
        fused.s_context = fused.s_anomaly * fused.s_corr;
        fused.w_licg = fused.w_mcg * fused.s_context;
        if (fused.w_licg < theta_p) continue;
        out.edges.push_back(std::move(fused));
    }
    return out;
}

namespace {

RankedCauses rank_from_scores(const Licg& licg, const std::vector<double>& scores) {
    std::vector<std::size_t> order(licg.nodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (scores[x] != scores[y]) return scores[x] > scores[y];
        if (licg.nodes[x].max_abs_z != licg.nodes[y].max_abs_z)
            return licg.nodes[x].max_abs_z > licg.nodes[y].max_abs_z;
        return licg.nodes[x].key() < licg.nodes[y].key();
    });

    RankedCauses ranked;
    std::set<std::string> seen_services;
    for (std::size_t idx : order) {
        const auto& node = licg.nodes[idx];
        ranked.entries.push_back({node.instance_id, node.metric_name, scores[idx]});
        if (seen_services.insert(node.instance_id).second)
            ranked.service_ranking.push_back({node.instance_id, scores[idx]});
    }
    return ranked;
}

} // namespace

RankedCauses ccb_rank(const Licg& licg, double epsilon, int max_iters) {
    const std::size_t n = licg.nodes.size();
    std::map<SeriesKey, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) index[licg.nodes[i].key()] = i;

    struct Out {
        std::size_t child;
        double w;
    };
    std::vector<std::vector<Out>> children(n);
    for (const auto& edge : licg.edges)
        children[index.at(edge.cause)].push_back({index.at(edge.effect), edge.w_licg});

    std::vector<double> score(n, 1.0), next(n, 0.0);
    bool converged = false;
    int iters = 0;
    while (iters < max_iters) {
        ++iters;
        double max_delta = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
            double s = licg.nodes[u].anomaly_score;
            for (const Out& o : children[u]) s += score[o.child] * o.w;
            next[u] = s;
            max_delta = std::max(max_delta, std::abs(next[u] - score[u]));
        }
        score.swap(next);
        if (max_delta < epsilon) {
            converged = true;
            break;
        }
    }

    RankedCauses ranked = rank_from_scores(licg, score);
    ranked.converged = converged || n == 0;
    ranked.iterations = iters;
    return ranked;
}

RankedCauses pagerank_rank(const Licg& licg, double damping) {
    const std::size_t n = licg.nodes.size();
    std::map<SeriesKey, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) index[licg.nodes[i].key()] = i;

    // Mass flows from effects toward causes: reverse every edge.
    struct Out {
        std::size_t to;
        double w;
    };
    std::vector<std::vector<Out>> out_edges(n);
    std::vector<double> out_weight(n, 0.0);
    for (const auto& edge : licg.edges) {
        const std::size_t from = index.at(edge.effect);
        const std::size_t to = index.at(edge.cause);
        if (edge.w_licg <= 0.0) continue;
        out_edges[from].push_back({to, edge.w_licg});
        out_weight[from] += edge.w_licg;
    }

    RankedCauses ranked;
    if (n == 0) return ranked;

    std::vector<double> rank(n, 1.0 / static_cast<double>(n)), next(n, 0.0);
    const double teleport = (1.0 - damping) / static_cast<double>(n);
    int iters = 0;
    bool converged = false;
    while (iters < 1000) {
        ++iters;
        double dangling = 0.0;
        for (std::size_t u = 0; u < n; ++u)
            if (out_edges[u].empty()) dangling += rank[u];
        std::fill(next.begin(), next.end(),
                  teleport + damping * dangling / static_cast<double>(n));
        for (std::size_t u = 0; u < n; ++u) {
            for (const Out& o : out_edges[u])
                next[o.to] += damping * rank[u] * (o.w / out_weight[u]);
        }
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) delta += std::abs(next[i] - rank[i]);
        rank.swap(next);
        if (delta < 1e-8) {
            converged = true;
            break;
        }
    }

    ranked = rank_from_scores(licg, rank);
    ranked.converged = converged;
    ranked.iterations = iters;
    return ranked;
}

DiagnoseResult diagnose(const mcg::MetaCausalGraph& graph,
                        const ontology::MetadataOntology& ontology,
                        const telemetry::IncidentDataset& dataset,
                        const DiagnoseParams& params) {
    DiagnoseResult result;
    const auto t_detect = std::chrono::steady_clock::now();

    const telemetry::AnomalyReport report = detect_anomalies(dataset, params.z_threshold);
    result.frz = telemetry::compute_frz(dataset, report);
    if (result.frz.empty()) {
        result.incident_detected = false;
        result.timing_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_detect).count();
        return result;
    }
    result.incident_detected = true;

    Licg instantiated = instantiate_licg(graph, ontology, dataset.topology, result.frz, report);
    const double theta_p = params.disable_fusion ? 0.0 : params.theta_p;
    if (!params.disable_fusion) score_context(instantiated, dataset, params.k_max);
    Licg pruned = fuse_and_prune(instantiated, theta_p);

    result.ranked = params.ranker == Ranker::Ccb
                        ? ccb_rank(pruned, params.epsilon, params.max_iters)
                        : pagerank_rank(pruned, params.damping);
    result.timing_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_detect).count();

    if (!result.ranked.converged)
        result.warnings.push_back("ranking did not converge within iteration budget");
    for (const auto& note : instantiated.notes) result.warnings.push_back(note);

    if (params.keep_stages) {
        result.fused = fuse_and_prune(instantiated, 0.0);
        // Stage view before contextual scoring: weights fall back to the
        // prior belief.
        for (auto& e : instantiated.edges) {
            e.s_anomaly = e.s_corr = e.s_context = 1.0;
            e.w_licg = e.w_mcg;
            e.best_lag = 0;
        }
        result.instantiated = std::move(instantiated);
    }
    result.pruned = std::move(pruned);
    return result;
}

std::string ranked_output_text(const DiagnoseResult& result, bool include_timing) {
    json doc;
    doc["incident_detected"] = result.incident_detected;
    doc["cases"] = json::array();
    int rank = 0;
    for (const auto& e : result.ranked.entries) {
        doc["cases"].push_back({{"rank", ++rank},
                                {"instance", e.instance_id},
                                {"metric", e.metric_name},
                                {"score", e.score}});
    }
    doc["service_ranking"] = json::array();
    rank = 0;
    for (const auto& s : result.ranked.service_ranking)
        doc["service_ranking"].push_back(
            {{"rank", ++rank}, {"instance", s.instance_id}, {"score", s.score}});
    if (include_timing) {
        doc["timing_seconds"] = result.timing_seconds;
        doc["warnings"] = result.warnings;
    }
    return doc.dump(2) + "\n";
}

std::string to_dot(const Licg& licg, const std::string& graph_name, double min_weight) {
    std::ostringstream os;
    os << "digraph \"" << graph_name << "\" {\n";
    os << "  rankdir=LR;\n  node [shape=box, fontsize=10];\n";
    std::map<SeriesKey, std::size_t> ids;
    for (std::size_t i = 0; i < licg.nodes.size(); ++i) {
        const auto& n = licg.nodes[i];
        ids[n.key()] = i;
        os << "  n" << i << " [label=\"" << n.instance_id << "." << n.metric_name << "\"];\n";
    }
    for (const auto& e : licg.edges) {
        if (e.w_licg < min_weight) continue;
        os << "  n" << ids.at(e.cause) << " -> n" << ids.at(e.effect) << " [label=\""
           << fmt3(e.w_licg) << "\"];\n";
    }
    os << "}\n";
    return os.str();
}

std::string licg_to_json_text(const Licg& licg) {
    json doc;
    doc["provenance"] = {{"mcg_hash", licg.provenance.mcg_hash},
                         {"dataset_id", licg.provenance.dataset_id},
                         {"theta_p", licg.provenance.theta_p},
                         {"k_max", licg.provenance.k_max}};
    doc["nodes"] = json::array();
    for (const auto& n : licg.nodes)
        doc["nodes"].push_back({{"instance", n.instance_id},
                                {"metric", n.metric_name},
                                {"max_abs_z", n.max_abs_z},
                                {"anomaly_score", n.anomaly_score}});
    doc["edges"] = json::array();
    for (const auto& e : licg.edges)
        doc["edges"].push_back({{"cause", e.cause.to_string()},
                                {"effect", e.effect.to_string()},
                                {"meta_edge", e.meta_edge_key.to_string()},
                                {"w_mcg", e.w_mcg},
                                {"s_anomaly", e.s_anomaly},
                                {"s_corr", e.s_corr},
                                {"s_context", e.s_context},
                                {"w_licg", e.w_licg},
                                {"best_lag", e.best_lag}});
    return doc.dump(2) + "\n";
}

} // namespace metarca::online
