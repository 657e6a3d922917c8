#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace metarca::ontology {

enum class MetricKind { Sli, Resource };

enum class ConnType { Invoke, On, Internal };

std::string to_string(MetricKind kind);
std::string to_string(ConnType conn);
MetricKind metric_kind_from_string(const std::string& s);
ConnType conn_type_from_string(const std::string& s);

struct MetricDef {
    std::string name;
    MetricKind kind = MetricKind::Sli;
    std::string description;
    std::string unit;
};

struct ComponentType {
    std::string name;
    std::vector<MetricDef> metrics;
};

/// A legal interaction template between two component types. Internal
/// patterns (src == dst) are generated implicitly for every component type
/// and carry intra-component metric causality; they never appear in
/// ontology files.
struct ConnectionPattern {
    std::string src_type;
    std::string dst_type;
    ConnType conn_type = ConnType::Invoke;

    std::string id() const;
    bool is_internal() const { return conn_type == ConnType::Internal; }
};

/// A (component type, metric) pair — the node vocabulary shared by the
/// meta causal graph and all evidence.
struct MetaNode {
    std::string component_type;
    std::string metric_name;

    bool operator==(const MetaNode&) const = default;
    auto operator<=>(const MetaNode&) const = default;

    std::string to_string() const { return component_type + "." + metric_name; }
};

class MetadataOntology {
public:
    MetadataOntology() = default;
    MetadataOntology(std::vector<ComponentType> types,
                     std::vector<ConnectionPattern> declared_patterns);

    const std::vector<ComponentType>& component_types() const { return types_; }

    /// Declared patterns followed by the implicit Internal pattern of every
    /// component type, in declaration order.
    const std::vector<ConnectionPattern>& patterns() const { return patterns_; }

    bool has_component_type(const std::string& name) const;
    const ComponentType* find_component_type(const std::string& name) const;

    std::optional<ConnectionPattern> match_pattern(const std::string& src_type,
                                                   const std::string& dst_type,
                                                   ConnType conn) const;
    std::optional<ConnectionPattern> find_pattern_by_id(const std::string& id) const;

    std::optional<MetricDef> lookup_metric(const std::string& component_type,
                                           const std::string& metric_name) const;

    bool resolves(const MetaNode& node) const;

    /// Stable content hash over the canonical serialization; identifies the
    /// ontology inside MCG snapshots.
    std::string hash() const;

private:
    void validate() const;

    std::vector<ComponentType> types_;
    std::vector<ConnectionPattern> patterns_;  // declared + implicit Internal
    std::size_t declared_count_ = 0;
};

MetadataOntology load_ontology(const std::string& path);
void save_ontology(const MetadataOntology& ontology, const std::string& path);

MetadataOntology ontology_from_json_text(const std::string& text);
std::string ontology_to_json_text(const MetadataOntology& ontology);

} // namespace metarca::ontology
