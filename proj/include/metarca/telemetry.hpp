#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "metarca/ontology.hpp"

namespace metarca::telemetry {

using Timestamp = std::int64_t;  // UTC epoch seconds

constexpr double kZCap = 50.0;

struct SeriesKey {
    std::string instance_id;
    std::string metric_name;

    bool operator==(const SeriesKey&) const = default;
    auto operator<=>(const SeriesKey&) const = default;

    std::string to_string() const { return instance_id + "." + metric_name; }
};

/// One metric's samples; NaN marks a missing value.
struct MetricSeries {
    std::string instance_id;
    std::string metric_name;
    std::vector<Timestamp> timestamps;  // strictly increasing
    std::vector<double> values;
};

struct TopologyInstance {
    std::string instance_id;
    std::string component_type;
};

struct TopologyEdge {
    std::string src_instance;
    std::string dst_instance;
    ontology::ConnType conn_type = ontology::ConnType::Invoke;
};

struct Topology {
    std::vector<TopologyInstance> instances;
    std::vector<TopologyEdge> edges;

    const TopologyInstance* find_instance(const std::string& id) const;
    void validate(const ontology::MetadataOntology& ontology) const;
};

struct GroundTruth {
    std::string root_service;
    std::string root_metric;
};

struct IncidentDataset {
    std::string case_id;
    Topology topology;
    std::map<SeriesKey, MetricSeries> series;
    Timestamp t0 = 0;
    Timestamp t_fault = 0;
    Timestamp t_rca = 0;
    std::optional<GroundTruth> ground_truth;
    std::size_t dedup_count = 0;  // duplicate-timestamp rows dropped at load

    const MetricSeries* find_series(const std::string& instance,
                                    const std::string& metric) const;
};

struct SeriesAnomaly {
    double max_abs_z = 0.0;
    bool is_anomalous = false;
    bool scoreable = true;  // false: <5 baseline samples survive
};

struct AnomalyReport {
    double z_threshold = 3.0;
    std::map<SeriesKey, SeriesAnomaly> per_series;
    std::map<std::string, bool> instance_any_anomalous;
    std::vector<std::string> notices;

    double max_abs_z(const std::string& instance, const std::string& metric) const;
};

struct ZScorePoint {
    Timestamp timestamp;
    double z;
};

struct ZScoreResult {
    std::vector<ZScorePoint> points;  // evaluation window, missing skipped
    bool scoreable = true;
    double baseline_mean = 0.0;
    double baseline_std = 0.0;
};

/// z_t = (x_t - mu_baseline) / max(sigma_baseline, sigma_floor), clipped at
/// +-kZCap. Baseline window is [t0, t_fault), evaluation [t_fault, t_rca].
ZScoreResult zscore_series(const MetricSeries& series, Timestamp baseline_start,
                           Timestamp baseline_end, Timestamp eval_end);

AnomalyReport detect_anomalies(const IncidentDataset& dataset, double z_threshold = 3.0);

/// Instances exhibiting at least one anomalous metric.
std::set<std::string> compute_frz(const IncidentDataset& dataset, const AnomalyReport& report);

IncidentDataset load_dataset(const std::string& dir,
                             const ontology::MetadataOntology& ontology);
void save_dataset(const IncidentDataset& dataset, const std::string& dir);

} // namespace metarca::telemetry
