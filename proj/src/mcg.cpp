#include "metarca/mcg.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "metarca/errors.hpp"

namespace metarca::mcg {

using nlohmann::json;
using ontology::ConnType;
using ontology::ConnectionPattern;
using ontology::MetadataOntology;

std::string to_string(EdgeOrigin origin) {
    return origin == EdgeOrigin::Bootstrap ? "bootstrap" : "case_evidence";
}

EdgeOrigin edge_origin_from_string(const std::string& s) {
    if (s == "bootstrap") return EdgeOrigin::Bootstrap;
    if (s == "case_evidence") return EdgeOrigin::CaseEvidence;
    throw ParseError("unknown edge origin '" + s + "'");
}

double cbs(double log_odds) {
    return 1.0 / (1.0 + std::exp(-log_odds));
}

double log_odds_from_prior(double p0) {
    if (!(p0 > 0.0 && p0 < 1.0))
        throw std::domain_error("prior probability must lie in (0, 1), got " +
                                std::to_string(p0));
    return std::log(p0 / (1.0 - p0));
}

double decay_factor(double delta_t_days, double k) {
    if (delta_t_days < 0.0)
        throw std::domain_error("evidence age must be non-negative, got " +
                                std::to_string(delta_t_days));
    if (k < 0.0) throw std::domain_error("decay constant must be non-negative");
    return std::exp(-k * delta_t_days);
}

void BeliefConfig::validate() const {
    if (!(lambda_da > 0.0) || !(lambda_fr > lambda_da))
        throw ValidationError("belief config requires lambda_fr > lambda_da > 0");
    if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("belief config requires 0 < p0 < 1");
    if (decay_k < 0.0) throw ValidationError("belief config requires decay_k >= 0");
}

namespace {

double age_days(Timestamp from, Timestamp to) {
    return static_cast<double>(to - from) / kSecondsPerDay;
}

/// Structural validity of an edge key against the ontology.
std::optional<std::string> validate_edge_key(const MetadataOntology& ontology,
                                             const MetaEdgeKey& key) {
    if (!ontology.resolves(key.cause))
        return "cause node " + key.cause.to_string() + " does not resolve";
    if (!ontology.resolves(key.effect))
        return "effect node " + key.effect.to_string() + " does not resolve";
    const auto pattern = ontology.find_pattern_by_id(key.pattern_id);
    if (!pattern) return "pattern '" + key.pattern_id + "' is not declared";
    auto on_endpoint = [&](const MetaNode& n) {
        return n.component_type == pattern->src_type || n.component_type == pattern->dst_type;
    };
    if (!on_endpoint(key.cause) || !on_endpoint(key.effect))
        return "edge nodes do not sit on pattern '" + key.pattern_id + "'";
    if (pattern->is_internal()) {
        if (key.cause.component_type != key.effect.component_type)
            return "internal pattern edge must stay within one component type";
        if (key.cause == key.effect) return "self edge on internal pattern";
    } else if (key.cause == key.effect && pattern->src_type != pattern->dst_type) {
        return "self edge " + key.cause.to_string();
    }
    return std::nullopt;
}

} // namespace

const MetaEdge* MetaCausalGraph::find_edge(const MetaEdgeKey& key) const {
    auto it = edges_.find(key);
    return it == edges_.end() ? nullptr : &it->second;
}

MetaEdge* MetaCausalGraph::find_edge(const MetaEdgeKey& key) {
    auto it = edges_.find(key);
    return it == edges_.end() ? nullptr : &it->second;
}

bool MetaCausalGraph::insert_loaded_edge(MetaEdge edge) {
    const MetaEdgeKey key = edge.key;
    return edges_.emplace(key, std::move(edge)).second;
}

bool MetaCausalGraph::add_bootstrap_edge(const MetaEdgeKey& key) {
    MetaEdge edge;
    edge.key = key;
    edge.log_odds = log_odds_from_prior(config_.p0);
    edge.last_update = bootstrap_time_;
    edge.origin = EdgeOrigin::Bootstrap;
    return edges_.emplace(key, std::move(edge)).second;
}

std::optional<MetaEdgeKey> MetaCausalGraph::resolve_evidence_key(
    const MetadataOntology& ontology, const EvidenceRecord& record, std::string* reason) const {
    if (auto err = evidence::validate_node_pair(ontology, record.cause, record.effect)) {
        *reason = *err;
        return std::nullopt;
    }

    // Derive the pattern the pair would sit on. Same-type pairs with
    // distinct metrics default to the implicit internal pattern; otherwise
    // declared patterns are searched in both orientations, invoke before on.
    std::optional<ConnectionPattern> derived;
    const std::string& ct = record.cause.component_type;
    const std::string& et = record.effect.component_type;
    if (ct == et && record.cause != record.effect) {
        derived = ontology.match_pattern(ct, et, ConnType::Internal);
    }
    if (!derived) {
        for (const auto& [src, dst] : {std::pair{ct, et}, std::pair{et, ct}}) {
            for (ConnType conn : {ConnType::Invoke, ConnType::On}) {
                if (derived) break;
                derived = ontology.match_pattern(src, dst, conn);
            }
            if (derived) break;
        }
    }

    // An existing edge with this node pair wins over the derived pattern so
    // a snapshot built from an explicit bootstrap list keeps collecting its
    // evidence even when re-derivation would pick another pattern.
    const MetaEdge* best = nullptr;
    for (const auto& [key, edge] : edges_) {
        if (key.cause != record.cause || key.effect != record.effect) continue;
        if (derived && key.pattern_id == derived->id()) return key;
        if (!best) best = &edge;
    }
    if (best) return best->key;

    if (!derived) {
        *reason = "no connection pattern matches " + record.cause.to_string() + " -> " +
                  record.effect.to_string();
        return std::nullopt;
    }
    return MetaEdgeKey{record.cause, record.effect, derived->id()};
}

UpdateReport MetaCausalGraph::batch_update(const MetadataOntology& ontology,
                                           const std::vector<EvidenceRecord>& records,
                                           Timestamp t_ref) {
    UpdateReport report;

    struct Resolved {
        MetaEdgeKey key;
        const EvidenceRecord* record;
    };
    std::vector<Resolved> resolved;
    std::set<MetaEdgeKey> case_supported;
    for (const auto& record : records) {
        std::string reason;
        if (record.timestamp > t_ref) {
            report.rejections.push_back(
                {record.source_id, "evidence timestamp is after the batch reference time"});
            continue;
        }
        auto key = resolve_evidence_key(ontology, record, &reason);
        if (!key) {
            report.rejections.push_back({record.source_id, reason});
            continue;
        }
        if (record.kind == EvidenceKind::Case) case_supported.insert(*key);
        resolved.push_back({*key, &record});
    }

    // The batch is the authoritative history: case evidence introduces
    // missing edges at the neutral prior, and evidence-created edges it no
    // longer supports are dropped.
    for (const auto& key : case_supported) {
        if (edges_.count(key)) continue;
        MetaEdge edge;
        edge.key = key;
        edge.origin = EdgeOrigin::CaseEvidence;
        edges_.emplace(key, std::move(edge));
        ++report.created_edges;
    }
    for (auto it = edges_.begin(); it != edges_.end();) {
        if (it->second.origin == EdgeOrigin::CaseEvidence && !case_supported.count(it->first))
            it = edges_.erase(it);
        else
            ++it;
    }

    // Recompute every edge from its prior plus this batch's contributions.
    for (auto& [key, edge] : edges_) {
        edge.log_odds =
            edge.origin == EdgeOrigin::Bootstrap ? log_odds_from_prior(config_.p0) : 0.0;
        edge.counts = {};
        edge.last_update = t_ref;
    }
    for (const auto& r : resolved) {
        auto it = edges_.find(r.key);
        if (it == edges_.end()) {
            report.rejections.push_back(
                {r.record->source_id,
                 "statistical evidence cannot introduce edge " + r.key.to_string()});
            continue;
        }
        MetaEdge& edge = it->second;
        const double decay = decay_factor(age_days(r.record->timestamp, t_ref), config_.decay_k);
        edge.log_odds += config_.lambda(r.record->kind) * decay;
        if (r.record->kind == EvidenceKind::Case) {
            ++edge.counts.case_count;
            ++report.applied_case;
        } else {
            ++edge.counts.statistical_count;
            ++report.applied_statistical;
        }
    }
    return report;
}

UpdateReport MetaCausalGraph::streaming_update(const MetadataOntology& ontology,
                                               const EvidenceRecord& record, Timestamp t_now) {
    UpdateReport report;
    std::string reason;
    auto key = resolve_evidence_key(ontology, record, &reason);
    if (!key) {
        report.rejections.push_back({record.source_id, reason});
        return report;
    }

    MetaEdge* edge = find_edge(*key);
    if (!edge) {
        if (record.kind == EvidenceKind::Statistical) {
            report.rejections.push_back(
                {record.source_id,
                 "statistical evidence cannot introduce edge " + key->to_string()});
            return report;
        }
        MetaEdge created;
        created.key = *key;
        created.log_odds = config_.lambda_fr;  // neutral prior 0, then the new factor
        created.last_update = t_now;
        created.counts.case_count = 1;
        created.origin = EdgeOrigin::CaseEvidence;
        edges_.emplace(*key, std::move(created));
        ++report.created_edges;
        ++report.applied_case;
        return report;
    }

    if (t_now < edge->last_update)
        throw OrderingError("streaming update at " + std::to_string(t_now) +
                            " precedes last update " + std::to_string(edge->last_update) +
                            " of edge " + key->to_string());

    const double decay = decay_factor(age_days(edge->last_update, t_now), config_.decay_k);
    edge->log_odds = edge->log_odds * decay + config_.lambda(record.kind);
    edge->last_update = t_now;
    if (record.kind == EvidenceKind::Case) {
        ++edge->counts.case_count;
        ++report.applied_case;
    } else {
        ++edge->counts.statistical_count;
        ++report.applied_statistical;
    }
    return report;
}

std::vector<const MetaEdge*> MetaCausalGraph::edges_on_pattern(
    const std::string& pattern_id) const {
    std::vector<const MetaEdge*> out;
    for (const auto& [key, edge] : edges_)
        if (key.pattern_id == pattern_id) out.push_back(&edge);
    return out;
}

MetaCausalGraph bootstrap_skeleton(const MetadataOntology& ontology,
                                   const std::vector<BootstrapEdgeSpec>& edges,
                                   const BeliefConfig& config, Timestamp bootstrap_time,
                                   BootstrapReport* report) {
    config.validate();
    MetaCausalGraph graph(ontology.hash(), config, bootstrap_time);
    BootstrapReport local;
    BootstrapReport& rep = report ? *report : local;
    for (const auto& spec : edges) {
        const MetaEdgeKey key{spec.cause, spec.effect, spec.pattern_id};
        if (auto err = validate_edge_key(ontology, key)) {
            rep.rejections.push_back({key.to_string(), *err});
            continue;
        }
        if (!graph.add_bootstrap_edge(key)) {
            rep.rejections.push_back({key.to_string(), "duplicate bootstrap edge"});
            continue;
        }
        ++rep.accepted;
    }
    return graph;
}

std::vector<BootstrapEdgeSpec> load_bootstrap_edges(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open bootstrap edge list: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bootstrap edge list parse error: ") + e.what());
    }
    std::vector<BootstrapEdgeSpec> specs;
    try {
        for (const auto& je : doc.at("edges")) {
            BootstrapEdgeSpec spec;
            spec.cause = MetaNode{je.at("cause").at("type").get<std::string>(),
                                  je.at("cause").at("metric").get<std::string>()};
            spec.effect = MetaNode{je.at("effect").at("type").get<std::string>(),
                                   je.at("effect").at("metric").get<std::string>()};
            spec.pattern_id = je.at("pattern").get<std::string>();
            specs.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("bootstrap edge list schema error: ") + e.what());
    }
    return specs;
}

void save_mcg(const MetaCausalGraph& graph, const std::string& path) {
    json doc;
    doc["ontology_hash"] = graph.ontology_hash();
    doc["config"] = {{"lambda_fr", graph.config().lambda_fr},
                     {"lambda_da", graph.config().lambda_da},
                     {"decay_k", graph.config().decay_k},
                     {"p0", graph.config().p0}};
    doc["bootstrap_time"] = graph.bootstrap_time();
    doc["edges"] = json::array();
    for (const auto& [key, edge] : graph.edges()) {
        doc["edges"].push_back(
            {{"cause", {{"type", key.cause.component_type}, {"metric", key.cause.metric_name}}},
             {"effect",
              {{"type", key.effect.component_type}, {"metric", key.effect.metric_name}}},
             {"pattern", key.pattern_id},
             {"log_odds", edge.log_odds},
             {"last_update", edge.last_update},
             {"counts",
              {{"case", edge.counts.case_count}, {"statistical", edge.counts.statistical_count}}},
             {"origin", to_string(edge.origin)}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write MCG snapshot: " + path);
    out << doc.dump(2) << "\n";
}

MetaCausalGraph load_mcg(const std::string& path, const MetadataOntology& ontology) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open MCG snapshot: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("MCG snapshot parse error: ") + e.what());
    }
    try {
        BeliefConfig config;
        config.lambda_fr = doc.at("config").at("lambda_fr").get<double>();
        config.lambda_da = doc.at("config").at("lambda_da").get<double>();
        config.decay_k = doc.at("config").at("decay_k").get<double>();
        config.p0 = doc.at("config").at("p0").get<double>();

        MetaCausalGraph graph(doc.at("ontology_hash").get<std::string>(), config,
                              doc.at("bootstrap_time").get<Timestamp>());
        if (graph.ontology_hash() != ontology.hash()) graph.flag_ontology_hash_mismatch();

        for (const auto& je : doc.at("edges")) {
            MetaEdge edge;
            edge.key.cause = MetaNode{je.at("cause").at("type").get<std::string>(),
                                      je.at("cause").at("metric").get<std::string>()};
            edge.key.effect = MetaNode{je.at("effect").at("type").get<std::string>(),
                                       je.at("effect").at("metric").get<std::string>()};
            edge.key.pattern_id = je.at("pattern").get<std::string>();
            edge.log_odds = je.at("log_odds").get<double>();
            edge.last_update = je.at("last_update").get<Timestamp>();
            edge.counts.case_count = je.at("counts").at("case").get<std::int64_t>();
            edge.counts.statistical_count = je.at("counts").at("statistical").get<std::int64_t>();
            edge.origin = edge_origin_from_string(je.at("origin").get<std::string>());
            if (!std::isfinite(edge.log_odds))
                throw ValidationError("edge " + edge.key.to_string() + " has non-finite score");
            if (edge.counts.case_count < 0 || edge.counts.statistical_count < 0)
                throw ValidationError("edge " + edge.key.to_string() + " has negative counts");
            if (auto err = validate_edge_key(ontology, edge.key))
                throw ValidationError("edge " + edge.key.to_string() + ": " + *err);
            const std::string key_str = edge.key.to_string();
            if (!graph.insert_loaded_edge(std::move(edge)))
                throw ValidationError("duplicate edge key in snapshot: " + key_str);
        }
        return graph;
    } catch (const json::exception& e) {
        throw ParseError(std::string("MCG snapshot schema error: ") + e.what());
    }
}

} // namespace metarca::mcg
