#include "metarca/ontology.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "metarca/errors.hpp"

namespace metarca::ontology {

using nlohmann::json;

std::string to_string(MetricKind kind) {
    return kind == MetricKind::Sli ? "sli" : "resource";
}

std::string to_string(ConnType conn) {
    switch (conn) {
        case ConnType::Invoke: return "invoke";
        case ConnType::On: return "on";
        case ConnType::Internal: return "internal";
    }
    return "invoke";
}

MetricKind metric_kind_from_string(const std::string& s) {
    if (s == "sli" || s == "SLI") return MetricKind::Sli;
    if (s == "resource" || s == "Resource") return MetricKind::Resource;
    throw ParseError("unknown metric kind '" + s + "' (expected sli|resource)");
}

ConnType conn_type_from_string(const std::string& s) {
    if (s == "invoke") return ConnType::Invoke;
    if (s == "on") return ConnType::On;
    if (s == "internal") return ConnType::Internal;
    throw ParseError("unknown conn_type '" + s + "' (expected invoke|on)");
}

std::string ConnectionPattern::id() const {
    return src_type + "--" + to_string(conn_type) + "-->" + dst_type;
}

namespace {

bool canonical_name(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return c > 0x20 && c < 0x7f && c != ',';
    });
}

} // namespace

MetadataOntology::MetadataOntology(std::vector<ComponentType> types,
                                   std::vector<ConnectionPattern> declared_patterns)
    : types_(std::move(types)), patterns_(std::move(declared_patterns)),
      declared_count_(patterns_.size()) {
    validate();
    // Implicit Internal pattern per component type, so intra-component
    // meta-edges always have a pattern to live on.
    for (const auto& t : types_) {
        patterns_.push_back({t.name, t.name, ConnType::Internal});
    }
}

void MetadataOntology::validate() const {
    std::set<std::string> type_names;
    for (const auto& t : types_) {
        if (!canonical_name(t.name))
            throw ValidationError("component type name '" + t.name +
                                  "' is not a canonical ASCII identifier");
        if (!type_names.insert(t.name).second)
            throw ValidationError("duplicate component type '" + t.name + "'");
        if (t.metrics.empty())
            throw ValidationError("component type '" + t.name + "' declares no metrics");
        std::set<std::string> metric_names;
        for (const auto& m : t.metrics) {
            if (!canonical_name(m.name))
                throw ValidationError("metric name '" + m.name + "' on '" + t.name +
                                      "' is not a canonical ASCII identifier");
            if (!metric_names.insert(m.name).second)
                throw ValidationError("duplicate metric '" + m.name + "' on component type '" +
                                      t.name + "'");
        }
    }
    std::set<std::string> pattern_ids;
    for (const auto& p : patterns_) {
        if (p.conn_type == ConnType::Internal)
            throw ValidationError("pattern '" + p.id() +
                                  "' declares conn_type internal; internal patterns are implicit");
        if (!type_names.count(p.src_type))
            throw ValidationError("pattern '" + p.id() + "' references undeclared type '" +
                                  p.src_type + "'");
        if (!type_names.count(p.dst_type))
            throw ValidationError("pattern '" + p.id() + "' references undeclared type '" +
                                  p.dst_type + "'");
        if (!pattern_ids.insert(p.id()).second)
            throw ValidationError("duplicate pattern '" + p.id() + "'");
    }
}

bool MetadataOntology::has_component_type(const std::string& name) const {
    return find_component_type(name) != nullptr;
}

const ComponentType* MetadataOntology::find_component_type(const std::string& name) const {
    for (const auto& t : types_)
        if (t.name == name) return &t;
    return nullptr;
}

std::optional<ConnectionPattern> MetadataOntology::match_pattern(const std::string& src_type,
                                                                 const std::string& dst_type,
                                                                 ConnType conn) const {
    for (const auto& p : patterns_)
        if (p.src_type == src_type && p.dst_type == dst_type && p.conn_type == conn) return p;
    return std::nullopt;
}

std::optional<ConnectionPattern> MetadataOntology::find_pattern_by_id(const std::string& id) const {
    for (const auto& p : patterns_)
        if (p.id() == id) return p;
    return std::nullopt;
}

std::optional<MetricDef> MetadataOntology::lookup_metric(const std::string& component_type,
                                                         const std::string& metric_name) const {
    const ComponentType* t = find_component_type(component_type);
    if (!t) return std::nullopt;
    for (const auto& m : t->metrics)
        if (m.name == metric_name) return m;
    return std::nullopt;
}

bool MetadataOntology::resolves(const MetaNode& node) const {
    return lookup_metric(node.component_type, node.metric_name).has_value();
}

std::string MetadataOntology::hash() const {
    // FNV-1a over the canonical serialization; an identifier, not a MAC.
    const std::string text = ontology_to_json_text(*this);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

MetadataOntology ontology_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("ontology parse error: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("component_types"))
        throw ParseError("ontology document must be an object with 'component_types'");

    std::vector<ComponentType> types;
    try {
        for (const auto& jt : doc.at("component_types")) {
            ComponentType t;
            t.name = jt.at("name").get<std::string>();
            for (const auto& jm : jt.at("metrics")) {
                MetricDef m;
                m.name = jm.at("name").get<std::string>();
                m.kind = metric_kind_from_string(jm.at("kind").get<std::string>());
                m.description = jm.value("description", "");
                m.unit = jm.value("unit", "");
                t.metrics.push_back(std::move(m));
            }
            types.push_back(std::move(t));
        }
        std::vector<ConnectionPattern> patterns;
        for (const auto& jp : doc.value("patterns", json::array())) {
            ConnectionPattern p;
            p.src_type = jp.at("src").get<std::string>();
            p.dst_type = jp.at("dst").get<std::string>();
            p.conn_type = conn_type_from_string(jp.at("conn_type").get<std::string>());
            patterns.push_back(std::move(p));
        }
        return MetadataOntology(std::move(types), std::move(patterns));
    } catch (const json::exception& e) {
        throw ParseError(std::string("ontology schema error: ") + e.what());
    }
}

std::string ontology_to_json_text(const MetadataOntology& ontology) {
    json doc;
    doc["component_types"] = json::array();
    for (const auto& t : ontology.component_types()) {
        json jt;
        jt["name"] = t.name;
        jt["metrics"] = json::array();
        for (const auto& m : t.metrics) {
            json jm;
            jm["name"] = m.name;
            jm["kind"] = to_string(m.kind);
            if (!m.description.empty()) jm["description"] = m.description;
            if (!m.unit.empty()) jm["unit"] = m.unit;
            jt["metrics"].push_back(std::move(jm));
        }
        doc["component_types"].push_back(std::move(jt));
    }
    doc["patterns"] = json::array();
    for (const auto& p : ontology.patterns()) {
        if (p.is_internal()) continue;  // implicit, never serialized
        doc["patterns"].push_back({{"src", p.src_type},
                                   {"dst", p.dst_type},
                                   {"conn_type", to_string(p.conn_type)}});
    }
    return doc.dump(2) + "\n";
}

MetadataOntology load_ontology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ontology file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return ontology_from_json_text(buf.str());
}

void save_ontology(const MetadataOntology& ontology, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write ontology file: " + path);
    out << ontology_to_json_text(ontology);
}

} // namespace metarca::ontology
