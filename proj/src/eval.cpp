#include "metarca/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "metarca/errors.hpp"

namespace metarca::eval {

namespace fs = std::filesystem;
using nlohmann::json;

double ac_at_k(const std::vector<CaseResult>& results, int k, Granularity granularity) {
    if (results.empty()) throw ValidationError("AC@k over an empty corpus is undefined");
    std::size_t hits = 0;
    for (const auto& r : results) {
        const auto& rank = granularity == Granularity::Service ? r.service_rank : r.metric_rank;
        if (rank && *rank <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

std::pair<double, double> avg_rca_time(const std::vector<CaseResult>& results) {
    if (results.empty()) throw ValidationError("RCA time over an empty corpus is undefined");
    double mean = 0.0;
    for (const auto& r : results) mean += r.rca_seconds;
    mean /= static_cast<double>(results.size());
    double var = 0.0;
    for (const auto& r : results) var += (r.rca_seconds - mean) * (r.rca_seconds - mean);
    var /= static_cast<double>(results.size());
    return {mean, std::sqrt(var)};
}

CaseResult case_result_from_diagnosis(const std::string& case_id,
                                      const telemetry::GroundTruth& ground_truth,
                                      const online::DiagnoseResult& result) {
    CaseResult out;
    out.case_id = case_id;
    out.ground_truth = ground_truth;
    out.rca_seconds = result.timing_seconds;
    for (std::size_t i = 0; i < result.ranked.service_ranking.size(); ++i) {
        if (result.ranked.service_ranking[i].instance_id == ground_truth.root_service) {
            out.service_rank = static_cast<int>(i) + 1;
            break;
        }
    }
    for (std::size_t i = 0; i < result.ranked.entries.size(); ++i) {
        const auto& e = result.ranked.entries[i];
        if (e.instance_id == ground_truth.root_service &&
            e.metric_name == ground_truth.root_metric) {
            out.metric_rank = static_cast<int>(i) + 1;
            break;
        }
    }
    return out;
}

namespace {

json accuracy_json(const BenchmarkReport& report) {
    json doc;
    doc["cases"] = json::array();
    for (const auto& c : report.cases) {
        json jc;
        jc["case_id"] = c.case_id;
        jc["ground_truth"] = {{"service", c.ground_truth.root_service},
                              {"metric", c.ground_truth.root_metric}};
        if (c.service_rank) jc["service_rank"] = *c.service_rank;
        if (c.metric_rank) jc["metric_rank"] = *c.metric_rank;
        doc["cases"].push_back(std::move(jc));
    }
    doc["skipped"] = json::array();
    for (const auto& s : report.skipped)
        doc["skipped"].push_back({{"case_id", s.case_id}, {"reason", s.reason}});
    json acc;
    for (const auto& [k, v] : report.ac_service) acc["service"]["ac@" + std::to_string(k)] = v;
    for (const auto& [k, v] : report.ac_metric) acc["metric"]["ac@" + std::to_string(k)] = v;
    doc["accuracy"] = std::move(acc);
    return doc;
}

} // namespace

std::string BenchmarkReport::accuracy_json_text() const {
    return accuracy_json(*this).dump(2) + "\n";
}

std::string BenchmarkReport::report_json_text() const {
    json doc = accuracy_json(*this);
    doc["timing"] = {{"mean_seconds", mean_rca_seconds}, {"std_seconds", std_rca_seconds}};
    json per_case = json::array();
    for (const auto& c : cases) per_case.push_back({{"case_id", c.case_id},
                                                    {"rca_seconds", c.rca_seconds}});
    doc["timing"]["per_case"] = std::move(per_case);
    return doc.dump(2) + "\n";
}

std::string BenchmarkReport::human_table() const {
    std::ostringstream os;
    char line[128];
    os << "granularity   AC@1    AC@3    AC@5\n";
    auto cell = [](const std::map<int, double>& m, int k) {
        auto it = m.find(k);
        return it == m.end() ? -1.0 : it->second;
    };
    std::snprintf(line, sizeof(line), "service      %6.3f  %6.3f  %6.3f\n",
                  cell(ac_service, 1), cell(ac_service, 3), cell(ac_service, 5));
    os << line;
    std::snprintf(line, sizeof(line), "metric       %6.3f  %6.3f  %6.3f\n",
                  cell(ac_metric, 1), cell(ac_metric, 3), cell(ac_metric, 5));
    os << line;
    std::snprintf(line, sizeof(line), "rca_time     %.3f(%.3f) s over %zu cases, %zu skipped\n",
                  mean_rca_seconds, std_rca_seconds, cases.size(), skipped.size());
    os << line;
    return os.str();
}

BenchmarkReport run_benchmark(const std::string& corpus_dir, const mcg::MetaCausalGraph& graph,
                              const ontology::MetadataOntology& ontology,
                              const BenchmarkParams& params) {
    const fs::path root(corpus_dir);
    if (!fs::is_directory(root)) throw IoError("corpus directory not found: " + corpus_dir);

    std::vector<std::string> case_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) case_dirs.push_back(entry.path().filename().string());
    std::sort(case_dirs.begin(), case_dirs.end());
    if (case_dirs.empty()) throw ValidationError("corpus contains no case directories");

    BenchmarkReport report;
    struct Slot {
        bool valid = false;
        CaseResult result;
        std::string error;
    };
    std::vector<Slot> slots(case_dirs.size());

    const int workers = std::max(1, params.workers);
    std::atomic<std::size_t> next{0};
    auto run_one = [&](std::size_t idx) {
        const std::string& name = case_dirs[idx];
        Slot& slot = slots[idx];
        try {
            const telemetry::IncidentDataset dataset =
                telemetry::load_dataset((root / name).string(), ontology);
            if (!dataset.ground_truth)
                throw ValidationError("case has no ground truth");
            const online::DiagnoseResult diag =
                online::diagnose(graph, ontology, dataset, params.diagnose);
            slot.result = case_result_from_diagnosis(name, *dataset.ground_truth, diag);
            slot.valid = true;
        } catch (const std::exception& e) {
            slot.error = e.what();
        }
    };

    if (workers == 1) {
        for (std::size_t i = 0; i < case_dirs.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t idx = next.fetch_add(1);
                    if (idx >= case_dirs.size()) return;
                    run_one(idx);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    for (std::size_t i = 0; i < case_dirs.size(); ++i) {
        if (slots[i].valid)
            report.cases.push_back(std::move(slots[i].result));
        else
            report.skipped.push_back({case_dirs[i], slots[i].error});
    }
    if (report.cases.empty())
        throw ValidationError("corpus has no valid cases (" +
                              std::to_string(report.skipped.size()) + " skipped)");

    for (int k : {1, 3, 5}) {
        report.ac_service[k] = ac_at_k(report.cases, k, Granularity::Service);
        report.ac_metric[k] = ac_at_k(report.cases, k, Granularity::Metric);
    }
    std::tie(report.mean_rca_seconds, report.std_rca_seconds) = avg_rca_time(report.cases);
    return report;
}

} // namespace metarca::eval
