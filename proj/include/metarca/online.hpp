#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "metarca/mcg.hpp"
#include "metarca/telemetry.hpp"

namespace metarca::online {

using telemetry::SeriesKey;
using telemetry::Timestamp;

struct LicgNode {
    std::string instance_id;
    std::string metric_name;
    double max_abs_z = 0.0;
    double anomaly_score = 0.5;  // sigmoid(max_abs_z)

    SeriesKey key() const { return SeriesKey{instance_id, metric_name}; }
};

struct LicgEdge {
    SeriesKey cause;
    SeriesKey effect;
    mcg::MetaEdgeKey meta_edge_key;
    double w_mcg = 0.0;     // prior belief inherited from the MCG
    double s_anomaly = 1.0;
    double s_corr = 1.0;
    double s_context = 1.0;
    double w_licg = 0.0;
    int best_lag = 0;
};

struct LicgProvenance {
    std::string mcg_hash;
    std::string dataset_id;
    double theta_p = 0.0;
    int k_max = 0;
};

struct Licg {
    std::vector<LicgNode> nodes;  // sorted by (instance, metric)
    std::vector<LicgEdge> edges;  // sorted by (cause, effect)
    LicgProvenance provenance;
    std::vector<std::string> notes;

    const LicgNode* find_node(const SeriesKey& key) const;
};

struct RankedEntry {
    std::string instance_id;
    std::string metric_name;
    double score = 0.0;
};

struct ServiceEntry {
    std::string instance_id;
    double score = 0.0;
};

struct RankedCauses {
    std::vector<RankedEntry> entries;          // score descending
    std::vector<ServiceEntry> service_ranking; // first-occurrence collapse
    bool converged = true;
    int iterations = 0;
};

struct LagCorrelation {
    double s_corr = 0.0;
    int best_lag = 0;
    bool sufficient = true;
};

/// max over k in 0..k_max of |rho(cause[0..n-k), effect[k..n))|; the cause
/// leads the effect by best_lag samples. Inputs are already aligned.
LagCorrelation lagged_correlation(const std::vector<double>& cause,
                                  const std::vector<double>& effect, int k_max);

/// min(sigmoid(|Z_u|max), sigmoid(|Z_v|max)).
double anomaly_cooccurrence(double max_abs_z_u, double max_abs_z_v);

/// Projects MCG meta-edges onto topology connections inside the FRZ plus
/// the internal pattern of every FRZ instance. Nodes exist only for metrics
/// touched by a projected edge.
Licg instantiate_licg(const mcg::MetaCausalGraph& graph,
                      const ontology::MetadataOntology& ontology,
                      const telemetry::Topology& topology, const std::set<std::string>& frz,
                      const telemetry::AnomalyReport& report);

/// Computes s_anomaly / s_corr / s_context and w_licg for every edge from
/// evaluation-window data.
void score_context(Licg& licg, const telemetry::IncidentDataset& dataset, int k_max);

/// Recomputes w_licg = w_mcg * s_anomaly * s_corr and removes edges below
/// theta_p. Isolated nodes stay: they remain rank candidates.
Licg fuse_and_prune(const Licg& licg, double theta_p);

/// Causal contribution back-propagation: Score(u) = A(u) +
/// sum over children v of Score(v) * w(u->v), iterated from 1 until the
/// largest change drops below epsilon.
RankedCauses ccb_rank(const Licg& licg, double epsilon = 1e-6, int max_iters = 100);

/// Comparison ranker: personalized PageRank on the edge-reversed graph.
RankedCauses pagerank_rank(const Licg& licg, double damping = 0.85);

enum class Ranker { Ccb, PageRank };

Ranker ranker_from_string(const std::string& s);
std::string to_string(Ranker ranker);

struct DiagnoseParams {
    double z_threshold = 3.0;
    double theta_p = 0.3;
    int k_max = 5;
    Ranker ranker = Ranker::Ccb;
    double epsilon = 1e-6;
    int max_iters = 100;
    double damping = 0.85;
    bool keep_stages = false;
    bool disable_fusion = false;  // ablation: s_context forced to 1, no pruning
};

struct DiagnoseResult {
    bool incident_detected = false;
    RankedCauses ranked;
    std::set<std::string> frz;
    Licg instantiated;  // populated when keep_stages
    Licg fused;         // populated when keep_stages
    Licg pruned;
    double timing_seconds = 0.0;
    std::vector<std::string> warnings;
};

DiagnoseResult diagnose(const mcg::MetaCausalGraph& graph,
                        const ontology::MetadataOntology& ontology,
                        const telemetry::IncidentDataset& dataset,
                        const DiagnoseParams& params = {});

/// Ranked output document; timing and warnings are omitted when
/// include_timing is false so reruns compare byte-for-byte.
std::string ranked_output_text(const DiagnoseResult& result, bool include_timing);

/// DOT rendering; edges lighter than min_weight are dropped from the
/// render only.
std::string to_dot(const Licg& licg, const std::string& graph_name, double min_weight = 0.0);

std::string licg_to_json_text(const Licg& licg);

} // namespace metarca::online
