#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metarca/ontology.hpp"
#include "metarca/telemetry.hpp"

namespace metarca::evidence {

using ontology::MetaNode;
using telemetry::Timestamp;

enum class EvidenceKind { Case, Statistical };

std::string to_string(EvidenceKind kind);
EvidenceKind evidence_kind_from_string(const std::string& s);

/// Standardized, ontology-aligned evidence unit. Case evidence is stamped
/// with the report time, statistical evidence with the source case's fault
/// time.
struct EvidenceRecord {
    EvidenceKind kind = EvidenceKind::Case;
    MetaNode cause;
    MetaNode effect;
    Timestamp timestamp = 0;
    std::string source_id;

    bool operator==(const EvidenceRecord&) const = default;
};

struct RawEntityRef {
    std::string entity_name;
    std::string metric_name;
};

/// Pre-extracted cause/effect pair from one failure report. Extraction
/// itself happens outside this repo; extracts arrive as documents.
struct RawCaseExtract {
    std::string report_id;
    RawEntityRef raw_cause;
    RawEntityRef raw_effect;
    Timestamp report_time = 0;
};

/// Deterministic stand-in for the semantic-alignment stage: raw entity
/// names map to component types, raw metric names map to canonical
/// (type, metric) pairs.
struct AliasMap {
    std::map<std::string, std::string> entities;
    std::map<std::string, MetaNode> metrics;
};

struct Rejection {
    std::string source_id;
    std::string reason;
};

struct AlignmentResult {
    std::vector<EvidenceRecord> records;
    std::vector<Rejection> rejections;
};

/// Validates an evidence node pair against the ontology. Equal cause and
/// effect tuples are permitted only when a same-type non-internal pattern
/// exists (the two pattern ends are distinct instances).
std::optional<std::string> validate_node_pair(const ontology::MetadataOntology& ontology,
                                              const MetaNode& cause, const MetaNode& effect);

std::optional<EvidenceRecord> align_case_extract(const RawCaseExtract& extract,
                                                 const ontology::MetadataOntology& ontology,
                                                 const AliasMap& aliases,
                                                 std::string* rejection_reason = nullptr);

AlignmentResult align_case_extracts(const std::vector<RawCaseExtract>& extracts,
                                    const ontology::MetadataOntology& ontology,
                                    const AliasMap& aliases);

struct InstanceCausalLink {
    telemetry::SeriesKey cause;
    telemetry::SeriesKey effect;
    int lag = 0;  // samples, effect behind cause
    double p_value = 1.0;
};

struct DiscoveryResult {
    std::vector<InstanceCausalLink> links;  // ordered by (cause, effect, lag)
    std::vector<std::string> notices;
};

/// Pluggable causal-discovery stage. The baseline implementation is
/// pairwise lagged Pearson correlation with an analytic significance test;
/// a conditional-independence method can be dropped in behind the same
/// surface.
class CausalDiscovery {
public:
    virtual ~CausalDiscovery() = default;
    virtual DiscoveryResult discover(const telemetry::IncidentDataset& dataset) const = 0;
};

class LaggedCorrelationDiscovery final : public CausalDiscovery {
public:
    LaggedCorrelationDiscovery(double alpha, int max_lag) : alpha_(alpha), max_lag_(max_lag) {}
    DiscoveryResult discover(const telemetry::IncidentDataset& dataset) const override;

private:
    double alpha_;
    int max_lag_;
};

DiscoveryResult discover_links(const telemetry::IncidentDataset& dataset, double alpha,
                               int max_lag);

/// Drops links inconsistent with the dependency graph and abstracts the
/// survivors to meta-level statistical evidence, at most one record per
/// meta edge per case.
AlignmentResult align_links_to_patterns(const std::vector<InstanceCausalLink>& links,
                                        const telemetry::IncidentDataset& dataset,
                                        const ontology::MetadataOntology& ontology);

std::vector<EvidenceRecord> read_evidence_stream(const std::string& path);
void write_evidence_stream(const std::vector<EvidenceRecord>& records, const std::string& path);

std::vector<RawCaseExtract> load_case_extracts(const std::string& path);
AliasMap load_alias_map(const std::string& path);

/// Pearson correlation over the pairs (a[i], b[i+lag)); NaN-free inputs.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Two-sided p-value of the Pearson correlation t-test with n-2 dof.
double pearson_p_value(double r, std::size_t n);

} // namespace metarca::evidence
