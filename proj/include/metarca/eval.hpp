#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metarca/online.hpp"

namespace metarca::eval {

enum class Granularity { Service, Metric };

struct CaseResult {
    std::string case_id;
    telemetry::GroundTruth ground_truth;
    std::optional<int> service_rank;  // 1-based; absent = not ranked
    std::optional<int> metric_rank;
    double rca_seconds = 0.0;
};

struct SkippedCase {
    std::string case_id;
    std::string reason;
};

/// Fraction of cases whose ground truth ranks within the top k. Ground
/// truths missing from the ranking count as rank infinity.
double ac_at_k(const std::vector<CaseResult>& results, int k, Granularity granularity);

/// Mean and population standard deviation of per-case RCA durations.
std::pair<double, double> avg_rca_time(const std::vector<CaseResult>& results);

struct BenchmarkReport {
    std::vector<CaseResult> cases;     // valid cases, ordered by case_id
    std::vector<SkippedCase> skipped;  // unparseable / invalid cases
    std::map<int, double> ac_service;  // k in {1, 3, 5}
    std::map<int, double> ac_metric;
    double mean_rca_seconds = 0.0;
    double std_rca_seconds = 0.0;

    /// Accuracy-only document: byte-stable across reruns and worker counts.
    std::string accuracy_json_text() const;
    /// Full machine-readable report including timing.
    std::string report_json_text() const;
    /// Human-readable summary table.
    std::string human_table() const;
};

struct BenchmarkParams {
    online::DiagnoseParams diagnose;
    int workers = 1;
};

/// Extracts the ground-truth ranks of one diagnosis.
CaseResult case_result_from_diagnosis(const std::string& case_id,
                                      const telemetry::GroundTruth& ground_truth,
                                      const online::DiagnoseResult& result);

/// Runs diagnose over every case directory under corpus_dir and aggregates
/// AC@{1,3,5} at both granularities plus timing.
BenchmarkReport run_benchmark(const std::string& corpus_dir,
                              const mcg::MetaCausalGraph& graph,
                              const ontology::MetadataOntology& ontology,
                              const BenchmarkParams& params = {});

} // namespace metarca::eval
