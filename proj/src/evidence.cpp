#include "metarca/evidence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "metarca/errors.hpp"

namespace metarca::evidence {

using nlohmann::json;
using ontology::ConnType;
using ontology::MetadataOntology;
using telemetry::IncidentDataset;
using telemetry::SeriesKey;

std::string to_string(EvidenceKind kind) {
    return kind == EvidenceKind::Case ? "case" : "statistical";
}

EvidenceKind evidence_kind_from_string(const std::string& s) {
    if (s == "case") return EvidenceKind::Case;
    if (s == "statistical") return EvidenceKind::Statistical;
    throw ParseError("unknown evidence kind '" + s + "' (expected case|statistical)");
}

std::optional<std::string> validate_node_pair(const MetadataOntology& ontology,
                                              const MetaNode& cause, const MetaNode& effect) {
    if (!ontology.resolves(cause))
        return "cause node " + cause.to_string() + " does not resolve against the ontology";
    if (!ontology.resolves(effect))
        return "effect node " + effect.to_string() + " does not resolve against the ontology";
    if (cause == effect) {
        // Identical tuples are legal only across the two ends of a same-type
        // connection pattern (e.g. latency -> latency over an invoke edge).
        const bool spanning =
            ontology.match_pattern(cause.component_type, cause.component_type, ConnType::Invoke) ||
            ontology.match_pattern(cause.component_type, cause.component_type, ConnType::On);
        if (!spanning)
            return "cause and effect are both " + cause.to_string() +
                   " and no same-type connection pattern exists";
    }
    return std::nullopt;
}

std::optional<EvidenceRecord> align_case_extract(const RawCaseExtract& extract,
                                                 const MetadataOntology& ontology,
                                                 const AliasMap& aliases,
                                                 std::string* rejection_reason) {
    auto reject = [&](const std::string& reason) -> std::optional<EvidenceRecord> {
        if (rejection_reason) *rejection_reason = reason;
        return std::nullopt;
    };
    auto align_side = [&](const RawEntityRef& ref, const char* side,
                          MetaNode& out) -> std::optional<std::string> {
        auto ent = aliases.entities.find(ref.entity_name);
        if (ent == aliases.entities.end())
            return std::string(side) + ": unmapped entity '" + ref.entity_name + "'";
        auto met = aliases.metrics.find(ref.metric_name);
        if (met == aliases.metrics.end())
            return std::string(side) + ": unmapped metric '" + ref.metric_name + "'";
        if (met->second.component_type != ent->second)
            return std::string(side) + ": metric '" + ref.metric_name + "' aligns to " +
                   met->second.component_type + " but entity '" + ref.entity_name +
                   "' aligns to " + ent->second;
        if (!ontology.lookup_metric(met->second.component_type, met->second.metric_name))
            return std::string(side) + ": aligned metric " + met->second.to_string() +
                   " is absent from the ontology";
        out = met->second;
        return std::nullopt;
    };

    EvidenceRecord record;
    record.kind = EvidenceKind::Case;
    record.timestamp = extract.report_time;
    record.source_id = extract.report_id;
    if (auto err = align_side(extract.raw_cause, "cause", record.cause)) return reject(*err);
    if (auto err = align_side(extract.raw_effect, "effect", record.effect)) return reject(*err);
    if (auto err = validate_node_pair(ontology, record.cause, record.effect)) return reject(*err);
    return record;
}

AlignmentResult align_case_extracts(const std::vector<RawCaseExtract>& extracts,
                                    const MetadataOntology& ontology, const AliasMap& aliases) {
    AlignmentResult result;
    for (const auto& extract : extracts) {
        std::string reason;
        if (auto record = align_case_extract(extract, ontology, aliases, &reason))
            result.records.push_back(std::move(*record));
        else
            result.rejections.push_back({extract.report_id, reason});
    }
    return result;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = std::min(a.size(), b.size());
    if (n < 2) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double pearson_p_value(double r, std::size_t n) {
    if (n < 3) return 1.0;
    const double r2 = std::min(r * r, 1.0 - 1e-15);
    const double dof = static_cast<double>(n - 2);
    const double t = std::abs(r) * std::sqrt(dof / (1.0 - r2));
    boost::math::students_t_distribution<double> dist(dof);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

namespace {

struct AlignedPair {
    std::vector<double> a;
    std::vector<double> b;
};

// Intersect two series on timestamps, dropping missing values.
AlignedPair align_series(const telemetry::MetricSeries& u, const telemetry::MetricSeries& v) {
    AlignedPair out;
    std::size_t i = 0, j = 0;
    while (i < u.timestamps.size() && j < v.timestamps.size()) {
        if (u.timestamps[i] < v.timestamps[j]) {
            ++i;
        } else if (u.timestamps[i] > v.timestamps[j]) {
            ++j;
        } else {
            if (!std::isnan(u.values[i]) && !std::isnan(v.values[j])) {
                out.a.push_back(u.values[i]);
                out.b.push_back(v.values[j]);
            }
            ++i;
            ++j;
        }
    }
    return out;
}

// |rho| for each lag k in 0..max_lag of b behind a; NaN when undefined.
std::vector<double> lagged_abs_rho(const std::vector<double>& a, const std::vector<double>& b,
                                   int max_lag) {
    std::vector<double> rho(static_cast<std::size_t>(max_lag) + 1,
                            std::numeric_limits<double>::quiet_NaN());
    const std::size_t n = a.size();
    for (int k = 0; k <= max_lag; ++k) {
        if (n < static_cast<std::size_t>(k) + 3) break;
        const std::size_t m = n - static_cast<std::size_t>(k);
        const std::vector<double> aa(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(m));
        const std::vector<double> bb(b.begin() + k, b.end());
        rho[static_cast<std::size_t>(k)] = std::abs(pearson(aa, bb));
    }
    return rho;
}

int argmax_lag(const std::vector<double>& rho) {
    int best = -1;
    double best_val = -1.0;
    for (std::size_t k = 0; k < rho.size(); ++k) {
        if (std::isnan(rho[k])) continue;
        if (rho[k] > best_val) {
            best_val = rho[k];
            best = static_cast<int>(k);
        }
    }
    return best;
}

double best_positive_lag(const std::vector<double>& rho) {
    double best = 0.0;
    for (std::size_t k = 1; k < rho.size(); ++k)
        if (!std::isnan(rho[k])) best = std::max(best, rho[k]);
    return best;
}

} // namespace

DiscoveryResult LaggedCorrelationDiscovery::discover(const IncidentDataset& dataset) const {
    DiscoveryResult result;

    std::vector<const telemetry::MetricSeries*> usable;
    for (const auto& [key, series] : dataset.series) {
        std::size_t n = 0;
        bool constant = true;
        double first = std::numeric_limits<double>::quiet_NaN();
        for (double v : series.values) {
            if (std::isnan(v)) continue;
            if (std::isnan(first))
                first = v;
            else if (v != first)
                constant = false;
            ++n;
        }
        if (n < 30) {
            result.notices.push_back("series " + key.to_string() +
                                     " skipped: fewer than 30 samples");
            continue;
        }
        if (constant) {
            result.notices.push_back("series " + key.to_string() + " skipped: constant");
            continue;
        }
        usable.push_back(&series);
    }
    if (usable.size() < 2)
        throw ValidationError("discovery needs at least 2 series with 30 or more samples");

    for (std::size_t i = 0; i < usable.size(); ++i) {
        for (std::size_t j = i + 1; j < usable.size(); ++j) {
            const auto& u = *usable[i];
            const auto& v = *usable[j];
            const AlignedPair pair = align_series(u, v);
            if (pair.a.size() < 30) continue;

            const std::vector<double> rho_fwd = lagged_abs_rho(pair.a, pair.b, max_lag_);
            const std::vector<double> rho_rev = lagged_abs_rho(pair.b, pair.a, max_lag_);

            auto consider = [&](const telemetry::MetricSeries& cause,
                                const telemetry::MetricSeries& effect,
                                const std::vector<double>& own,
                                const std::vector<double>& other) {
                const int lag = argmax_lag(own);
                if (lag < 0) return;
                const std::size_t m = pair.a.size() - static_cast<std::size_t>(lag);
                // Bonferroni over the lag family keeps the per-pair false
                // positive rate near alpha despite the max over lags.
                const double p =
                    std::min(1.0, pearson_p_value(own[static_cast<std::size_t>(lag)], m) *
                                      static_cast<double>(max_lag_ + 1));
                if (p >= alpha_) return;
                if (lag == 0 && best_positive_lag(own) <= best_positive_lag(other)) return;
                result.links.push_back({SeriesKey{cause.instance_id, cause.metric_name},
                                        SeriesKey{effect.instance_id, effect.metric_name}, lag,
                                        p});
            };
            consider(u, v, rho_fwd, rho_rev);
            consider(v, u, rho_rev, rho_fwd);
        }
    }

    std::sort(result.links.begin(), result.links.end(),
              [](const InstanceCausalLink& x, const InstanceCausalLink& y) {
                  return std::tie(x.cause, x.effect, x.lag) < std::tie(y.cause, y.effect, y.lag);
              });
    return result;
}

DiscoveryResult discover_links(const IncidentDataset& dataset, double alpha, int max_lag) {
    return LaggedCorrelationDiscovery(alpha, max_lag).discover(dataset);
}

AlignmentResult align_links_to_patterns(const std::vector<InstanceCausalLink>& links,
                                        const IncidentDataset& dataset,
                                        const MetadataOntology& ontology) {
    AlignmentResult result;
    const telemetry::Topology& topo = dataset.topology;

    // Unordered instance pair -> has any dependency edge.
    std::set<std::pair<std::string, std::string>> connected;
    for (const auto& e : topo.edges) {
        connected.insert({e.src_instance, e.dst_instance});
        connected.insert({e.dst_instance, e.src_instance});
    }

    std::set<std::pair<MetaNode, MetaNode>> emitted;  // one record per meta edge per case
    for (const auto& link : links) {
        const std::string source = dataset.case_id + "/" + link.cause.to_string() + "->" +
                                   link.effect.to_string() + "@" + std::to_string(link.lag);
        const auto* ci = topo.find_instance(link.cause.instance_id);
        const auto* ei = topo.find_instance(link.effect.instance_id);
        if (!ci || !ei) {
            result.rejections.push_back(
                {source, "link references unknown instance '" +
                             (ci ? link.effect.instance_id : link.cause.instance_id) + "'"});
            continue;
        }
        const bool intra = link.cause.instance_id == link.effect.instance_id;
        if (intra && link.cause.metric_name == link.effect.metric_name) {
            result.rejections.push_back({source, "degenerate self link"});
            continue;
        }
        if (!intra && !connected.count({link.cause.instance_id, link.effect.instance_id})) {
            result.rejections.push_back({source, "no dependency edge between instances"});
            continue;
        }

        EvidenceRecord record;
        record.kind = EvidenceKind::Statistical;
        record.cause = MetaNode{ci->component_type, link.cause.metric_name};
        record.effect = MetaNode{ei->component_type, link.effect.metric_name};
        record.timestamp = dataset.t_fault;
        record.source_id = dataset.case_id;
        if (auto err = validate_node_pair(ontology, record.cause, record.effect)) {
            result.rejections.push_back({source, *err});
            continue;
        }
        if (!emitted.insert({record.cause, record.effect}).second) continue;
        result.records.push_back(std::move(record));
    }
    return result;
}

namespace {

json record_to_json(const EvidenceRecord& r) {
    return json{{"kind", to_string(r.kind)},
                {"cause", {{"type", r.cause.component_type}, {"metric", r.cause.metric_name}}},
                {"effect", {{"type", r.effect.component_type}, {"metric", r.effect.metric_name}}},
                {"timestamp", r.timestamp},
                {"source_id", r.source_id}};
}

EvidenceRecord record_from_json(const json& j) {
    EvidenceRecord r;
    r.kind = evidence_kind_from_string(j.at("kind").get<std::string>());
    r.cause = MetaNode{j.at("cause").at("type").get<std::string>(),
                       j.at("cause").at("metric").get<std::string>()};
    r.effect = MetaNode{j.at("effect").at("type").get<std::string>(),
                        j.at("effect").at("metric").get<std::string>()};
    r.timestamp = j.at("timestamp").get<Timestamp>();
    r.source_id = j.value("source_id", "");
    return r;
}

} // namespace

std::vector<EvidenceRecord> read_evidence_stream(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open evidence stream: " + path);
    std::vector<EvidenceRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError("evidence stream " + path + " line " + std::to_string(lineno) +
                             ": " + e.what());
        }
    }
    return records;
}

void write_evidence_stream(const std::vector<EvidenceRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write evidence stream: " + path);
    for (const auto& r : records) out << record_to_json(r).dump() << "\n";
}

std::vector<RawCaseExtract> load_case_extracts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open extracts file: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("extracts parse error: ") + e.what());
    }
    std::vector<RawCaseExtract> extracts;
    try {
        for (const auto& je : doc) {
            RawCaseExtract x;
            x.report_id = je.at("report_id").get<std::string>();
            x.raw_cause = {je.at("raw_cause").at("entity_name").get<std::string>(),
                           je.at("raw_cause").at("metric_name").get<std::string>()};
            x.raw_effect = {je.at("raw_effect").at("entity_name").get<std::string>(),
                            je.at("raw_effect").at("metric_name").get<std::string>()};
            x.report_time = je.at("report_time").get<Timestamp>();
            extracts.push_back(std::move(x));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("extracts schema error: ") + e.what());
    }
    return extracts;
}

AliasMap load_alias_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open alias map: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("alias map parse error: ") + e.what());
    }
    AliasMap aliases;
    try {
        const json entities = doc.value("entities", json::object());
        const json metrics = doc.value("metrics", json::object());
        for (const auto& [raw, type] : entities.items())
            aliases.entities[raw] = type.get<std::string>();
        for (const auto& [raw, node] : metrics.items())
            aliases.metrics[raw] = MetaNode{node.at("type").get<std::string>(),
                                            node.at("metric").get<std::string>()};
    } catch (const json::exception& e) {
        throw ParseError(std::string("alias map schema error: ") + e.what());
    }
    return aliases;
}

} // namespace metarca::evidence
