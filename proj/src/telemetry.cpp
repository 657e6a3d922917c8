#include "metarca/telemetry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "metarca/errors.hpp"

namespace metarca::telemetry {

namespace fs = std::filesystem;
using nlohmann::json;

const TopologyInstance* Topology::find_instance(const std::string& id) const {
    for (const auto& inst : instances)
        if (inst.instance_id == id) return &inst;
    return nullptr;
}

void Topology::validate(const ontology::MetadataOntology& ontology) const {
    std::set<std::string> ids;
    for (const auto& inst : instances) {
        if (inst.instance_id.empty())
            throw ValidationError("topology instance with empty id");
        if (!ids.insert(inst.instance_id).second)
            throw ValidationError("duplicate topology instance '" + inst.instance_id + "'");
        if (!ontology.has_component_type(inst.component_type))
            throw ValidationError("instance '" + inst.instance_id +
                                  "' has unknown component type '" + inst.component_type + "'");
    }
    std::set<std::string> edge_keys;
    for (const auto& e : edges) {
        if (!ids.count(e.src_instance))
            throw ValidationError("topology edge references unknown instance '" +
                                  e.src_instance + "'");
        if (!ids.count(e.dst_instance))
            throw ValidationError("topology edge references unknown instance '" +
                                  e.dst_instance + "'");
        const std::string key =
            e.src_instance + "|" + e.dst_instance + "|" + ontology::to_string(e.conn_type);
        if (!edge_keys.insert(key).second)
            throw ValidationError("duplicate topology edge " + key);
    }
}

const MetricSeries* IncidentDataset::find_series(const std::string& instance,
                                                 const std::string& metric) const {
    auto it = series.find(SeriesKey{instance, metric});
    return it == series.end() ? nullptr : &it->second;
}

double AnomalyReport::max_abs_z(const std::string& instance, const std::string& metric) const {
    auto it = per_series.find(SeriesKey{instance, metric});
    return it == per_series.end() ? 0.0 : it->second.max_abs_z;
}

ZScoreResult zscore_series(const MetricSeries& series, Timestamp baseline_start,
                           Timestamp baseline_end, Timestamp eval_end) {
    ZScoreResult result;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < series.timestamps.size(); ++i) {
        const Timestamp t = series.timestamps[i];
        const double x = series.values[i];
        if (t < baseline_start || t >= baseline_end || std::isnan(x)) continue;
        sum += x;
        sum_sq += x * x;
        ++n;
    }
    if (n < 5) {
        result.scoreable = false;
        return result;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
    const double sigma = std::sqrt(var);
    const double sigma_floor = 1e-9 * std::max(std::abs(mean), 1.0);
    const double denom = std::max(sigma, sigma_floor);
    result.baseline_mean = mean;
    result.baseline_std = sigma;

    for (std::size_t i = 0; i < series.timestamps.size(); ++i) {
        const Timestamp t = series.timestamps[i];
        const double x = series.values[i];
        if (t < baseline_end || t > eval_end || std::isnan(x)) continue;
        double z = (x - mean) / denom;
        z = std::clamp(z, -kZCap, kZCap);
        result.points.push_back({t, z});
    }
    return result;
}

AnomalyReport detect_anomalies(const IncidentDataset& dataset, double z_threshold) {
    AnomalyReport report;
    report.z_threshold = z_threshold;
    for (const auto& inst : dataset.topology.instances)
        report.instance_any_anomalous[inst.instance_id] = false;

    for (const auto& [key, series] : dataset.series) {
        const ZScoreResult zs =
            zscore_series(series, dataset.t0, dataset.t_fault, dataset.t_rca);
        SeriesAnomaly a;
        if (!zs.scoreable) {
            a.scoreable = false;
            report.notices.push_back("series " + key.to_string() +
                                     " unscoreable: fewer than 5 baseline samples");
        } else {
            for (const auto& p : zs.points) a.max_abs_z = std::max(a.max_abs_z, std::abs(p.z));
            a.is_anomalous = a.max_abs_z > z_threshold;
        }
        report.per_series[key] = a;
        if (a.is_anomalous) report.instance_any_anomalous[key.instance_id] = true;
    }
    return report;
}

std::set<std::string> compute_frz(const IncidentDataset& dataset, const AnomalyReport& report) {
    std::set<std::string> frz;
    for (const auto& [key, a] : report.per_series)
        if (a.is_anomalous && dataset.topology.find_instance(key.instance_id)) frz.insert(key.instance_id);
    return frz;
}

namespace {

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path pick_existing(const fs::path& dir, std::initializer_list<const char*> names) {
    for (const char* name : names) {
        fs::path candidate = dir / name;
        if (fs::exists(candidate)) return candidate;
    }
    throw IoError("dataset directory " + dir.string() + " is missing " +
                  std::string(*names.begin()));
}

Topology topology_from_json(const json& doc) {
    Topology topo;
    try {
        for (const auto& ji : doc.at("instances")) {
            topo.instances.push_back(
                {ji.at("id").get<std::string>(), ji.at("type").get<std::string>()});
        }
        for (const auto& je : doc.value("edges", json::array())) {
            topo.edges.push_back(
                {je.at("src").get<std::string>(), je.at("dst").get<std::string>(),
                 ontology::conn_type_from_string(je.at("conn_type").get<std::string>())});
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("topology schema error: ") + e.what());
    }
    return topo;
}

// metrics.csv rows: timestamp,instance,metric,value
void load_metrics_csv(const fs::path& path, IncidentDataset& dataset) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file: " + path.string());
    std::string line;
    std::size_t lineno = 0;

    struct RawPoint {
        Timestamp t;
        double v;
    };
    std::map<SeriesKey, std::vector<RawPoint>> raw;

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1) {
            if (line != "timestamp,instance,metric,value")
                throw ParseError("metrics.csv: unexpected header '" + line + "'");
            continue;
        }
        std::array<std::string, 4> fields;
        std::size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            const std::size_t comma = line.find(',', start);
            if (f < 3) {
                if (comma == std::string::npos)
                    throw ParseError("metrics.csv line " + std::to_string(lineno) +
                                     ": expected 4 fields");
                fields[f] = line.substr(start, comma - start);
                start = comma + 1;
            } else {
                if (comma != std::string::npos)
                    throw ParseError("metrics.csv line " + std::to_string(lineno) +
                                     ": expected 4 fields");
                fields[f] = line.substr(start);
            }
        }
        RawPoint p{};
        try {
            p.t = std::stoll(fields[0]);
        } catch (const std::exception&) {
            throw ParseError("metrics.csv line " + std::to_string(lineno) +
                             ": bad timestamp '" + fields[0] + "'");
        }
        if (fields[3].empty() || fields[3] == "nan" || fields[3] == "NaN") {
            p.v = std::nan("");
        } else {
            try {
                std::size_t consumed = 0;
                p.v = std::stod(fields[3], &consumed);
                if (consumed != fields[3].size()) throw std::invalid_argument(fields[3]);
            } catch (const std::exception&) {
                throw ParseError("metrics.csv line " + std::to_string(lineno) + ": bad value '" +
                                 fields[3] + "'");
            }
        }
        if (!dataset.topology.find_instance(fields[1]))
            throw ValidationError("metrics.csv line " + std::to_string(lineno) +
                                  ": unknown instance '" + fields[1] + "'");
        raw[SeriesKey{fields[1], fields[2]}].push_back(p);
    }

    for (auto& [key, points] : raw) {
        std::stable_sort(points.begin(), points.end(),
                         [](const RawPoint& a, const RawPoint& b) { return a.t < b.t; });
        MetricSeries s;
        s.instance_id = key.instance_id;
        s.metric_name = key.metric_name;
        for (const auto& p : points) {
            if (!s.timestamps.empty() && s.timestamps.back() == p.t) {
                s.values.back() = p.v;  // last write wins
                ++dataset.dedup_count;
                continue;
            }
            s.timestamps.push_back(p.t);
            s.values.push_back(p.v);
        }
        for (Timestamp t : s.timestamps) {
            if (t < dataset.t0 || t > dataset.t_rca)
                throw ValidationError("series " + key.to_string() + " has sample at " +
                                      std::to_string(t) + " outside [t0, t_rca]");
        }
        dataset.series.emplace(key, std::move(s));
    }
}

} // namespace

IncidentDataset load_dataset(const std::string& dir,
                             const ontology::MetadataOntology& ontology) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + dir);

    IncidentDataset dataset;
    dataset.case_id = root.filename().string();
    if (dataset.case_id.empty()) dataset.case_id = root.parent_path().filename().string();

    json topo_doc, case_doc;
    try {
        topo_doc = json::parse(read_text_file(pick_existing(root, {"topology.json", "topology"})));
        case_doc = json::parse(read_text_file(pick_existing(root, {"case.json", "case"})));
    } catch (const json::exception& e) {
        throw ParseError(std::string("dataset parse error in ") + dir + ": " + e.what());
    }

    dataset.topology = topology_from_json(topo_doc);
    dataset.topology.validate(ontology);

    try {
        dataset.t0 = case_doc.at("t0").get<Timestamp>();
        dataset.t_fault = case_doc.at("t_F").get<Timestamp>();
        dataset.t_rca = case_doc.at("t_rca").get<Timestamp>();
        if (case_doc.contains("ground_truth") && !case_doc["ground_truth"].is_null()) {
            dataset.ground_truth =
                GroundTruth{case_doc["ground_truth"].at("service").get<std::string>(),
                            case_doc["ground_truth"].at("metric").get<std::string>()};
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("case metadata schema error: ") + e.what());
    }
    if (!(dataset.t0 < dataset.t_fault && dataset.t_fault < dataset.t_rca))
        throw ValidationError("case metadata violates t0 < t_F < t_rca");

    load_metrics_csv(root / "metrics.csv", dataset);
    return dataset;
}

void save_dataset(const IncidentDataset& dataset, const std::string& dir) {
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

    json topo;
    topo["instances"] = json::array();
    for (const auto& inst : dataset.topology.instances)
        topo["instances"].push_back({{"id", inst.instance_id}, {"type", inst.component_type}});
    topo["edges"] = json::array();
    for (const auto& e : dataset.topology.edges)
        topo["edges"].push_back({{"src", e.src_instance},
                                 {"dst", e.dst_instance},
                                 {"conn_type", ontology::to_string(e.conn_type)}});

    json case_doc;
    case_doc["t0"] = dataset.t0;
    case_doc["t_F"] = dataset.t_fault;
    case_doc["t_rca"] = dataset.t_rca;
    if (dataset.ground_truth) {
        case_doc["ground_truth"] = {{"service", dataset.ground_truth->root_service},
                                    {"metric", dataset.ground_truth->root_metric}};
    }

    std::ofstream topo_out(root / "topology.json");
    std::ofstream case_out(root / "case.json");
    std::ofstream metrics_out(root / "metrics.csv");
    if (!topo_out || !case_out || !metrics_out)
        throw IoError("cannot write dataset files under " + dir);
    topo_out << topo.dump(2) << "\n";
    case_out << case_doc.dump(2) << "\n";

    metrics_out << "timestamp,instance,metric,value\n";
    char buf[64];
    for (const auto& [key, s] : dataset.series) {
        for (std::size_t i = 0; i < s.timestamps.size(); ++i) {
            if (std::isnan(s.values[i])) {
                metrics_out << s.timestamps[i] << ',' << key.instance_id << ',' << key.metric_name
                            << ",nan\n";
            } else {
                std::snprintf(buf, sizeof(buf), "%.10g", s.values[i]);
                metrics_out << s.timestamps[i] << ',' << key.instance_id << ',' << key.metric_name
                            << ',' << buf << '\n';
            }
        }
    }
}

} // namespace metarca::telemetry
