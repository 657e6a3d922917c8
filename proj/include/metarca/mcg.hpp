#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metarca/evidence.hpp"
#include "metarca/ontology.hpp"

namespace metarca::mcg {

using evidence::EvidenceKind;
using evidence::EvidenceRecord;
using ontology::MetaNode;
using telemetry::Timestamp;

enum class EdgeOrigin { Bootstrap, CaseEvidence };

std::string to_string(EdgeOrigin origin);
EdgeOrigin edge_origin_from_string(const std::string& s);

/// Sigmoid of the accumulated log-odds: the edge's causal belief score.
double cbs(double log_odds);

/// ln(p / (1 - p)); domain error outside (0, 1).
double log_odds_from_prior(double p0);

/// exp(-k * dt_days); domain error for negative age.
double decay_factor(double delta_t_days, double k);

constexpr double kSecondsPerDay = 86400.0;

struct EvidenceCounts {
    std::int64_t case_count = 0;
    std::int64_t statistical_count = 0;
};

struct MetaEdgeKey {
    MetaNode cause;
    MetaNode effect;
    std::string pattern_id;

    bool operator==(const MetaEdgeKey&) const = default;
    auto operator<=>(const MetaEdgeKey&) const = default;

    std::string to_string() const {
        return cause.to_string() + " -> " + effect.to_string() + " on " + pattern_id;
    }
};

struct MetaEdge {
    MetaEdgeKey key;
    double log_odds = 0.0;
    Timestamp last_update = 0;
    EvidenceCounts counts;
    EdgeOrigin origin = EdgeOrigin::Bootstrap;

    double belief() const { return cbs(log_odds); }
};

struct BeliefConfig {
    double lambda_fr = 0.5;   // base log-Bayes factor, case evidence
    double lambda_da = 0.05;  // statistical evidence
    double decay_k = 0.005;   // per day
    double p0 = 0.5;          // bootstrap prior

    void validate() const;
    double lambda(EvidenceKind kind) const {
        return kind == EvidenceKind::Case ? lambda_fr : lambda_da;
    }
};

struct UpdateReport {
    std::size_t applied_case = 0;
    std::size_t applied_statistical = 0;
    std::size_t created_edges = 0;
    std::vector<evidence::Rejection> rejections;
};

class MetaCausalGraph {
public:
    MetaCausalGraph() = default;
    MetaCausalGraph(std::string ontology_hash, BeliefConfig config, Timestamp bootstrap_time)
        : ontology_hash_(std::move(ontology_hash)), config_(config),
          bootstrap_time_(bootstrap_time) {
        config_.validate();
    }

    const std::string& ontology_hash() const { return ontology_hash_; }
    const BeliefConfig& config() const { return config_; }
    Timestamp bootstrap_time() const { return bootstrap_time_; }
    bool ontology_hash_mismatch() const { return hash_mismatch_; }
    void flag_ontology_hash_mismatch() { hash_mismatch_ = true; }

    const std::map<MetaEdgeKey, MetaEdge>& edges() const { return edges_; }
    const MetaEdge* find_edge(const MetaEdgeKey& key) const;
    MetaEdge* find_edge(const MetaEdgeKey& key);

    /// Inserts a bootstrap edge at the configured prior. Returns false on a
    /// duplicate key.
    bool add_bootstrap_edge(const MetaEdgeKey& key);

    /// Snapshot loading only; rejects duplicate keys.
    bool insert_loaded_edge(MetaEdge edge);

    /// Recomputes every edge from its prior plus the given evidence, which
    /// is treated as the full relevant history. Case evidence introduces
    /// missing edges at the neutral prior; evidence-created edges the batch
    /// no longer supports are dropped; statistical evidence on a missing
    /// edge is rejected.
    UpdateReport batch_update(const ontology::MetadataOntology& ontology,
                              const std::vector<EvidenceRecord>& evidence, Timestamp t_ref);

    /// Decay-then-augment streaming step for one record. Records must be
    /// replayed in time order.
    UpdateReport streaming_update(const ontology::MetadataOntology& ontology,
                                  const EvidenceRecord& record, Timestamp t_now);

    /// Meta-edges riding the given pattern.
    std::vector<const MetaEdge*> edges_on_pattern(const std::string& pattern_id) const;

private:
    std::optional<MetaEdgeKey> resolve_evidence_key(const ontology::MetadataOntology& ontology,
                                                    const EvidenceRecord& record,
                                                    std::string* reason) const;

    std::string ontology_hash_;
    BeliefConfig config_;
    Timestamp bootstrap_time_ = 0;
    bool hash_mismatch_ = false;
    std::map<MetaEdgeKey, MetaEdge> edges_;
};

struct BootstrapEdgeSpec {
    MetaNode cause;
    MetaNode effect;
    std::string pattern_id;
};

struct BootstrapReport {
    std::size_t accepted = 0;
    std::vector<evidence::Rejection> rejections;
};

/// Builds the skeleton MCG from an offline-produced edge list; every
/// accepted edge starts at log_odds_from_prior(p0).
MetaCausalGraph bootstrap_skeleton(const ontology::MetadataOntology& ontology,
                                   const std::vector<BootstrapEdgeSpec>& edges,
                                   const BeliefConfig& config, Timestamp bootstrap_time,
                                   BootstrapReport* report = nullptr);

std::vector<BootstrapEdgeSpec> load_bootstrap_edges(const std::string& path);

void save_mcg(const MetaCausalGraph& graph, const std::string& path);
MetaCausalGraph load_mcg(const std::string& path, const ontology::MetadataOntology& ontology);

} // namespace metarca::mcg
