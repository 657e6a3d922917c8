#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "metarca/mcg.hpp"
#include "metarca/ontology.hpp"
#include "metarca/telemetry.hpp"

namespace testutil {

inline std::filesystem::path fixtures_dir() {
    return std::filesystem::path(METARCA_FIXTURES_DIR);
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "metarca_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

inline metarca::ontology::MetadataOntology standard_ontology() {
    return metarca::ontology::load_ontology((fixtures_dir() / "ontology.json").string());
}

// Four standard component types, two declared patterns; small enough to
// reason about by hand in pattern-matching tests.
inline metarca::ontology::MetadataOntology small_ontology() {
    using namespace metarca::ontology;
    std::vector<ComponentType> types;
    types.push_back({"Microservice",
                     {{"latency", MetricKind::Sli, "", ""},
                      {"tps", MetricKind::Resource, "", ""},
                      {"cpu_utilization", MetricKind::Resource, "", ""}}});
    types.push_back({"MySQL", {{"db_time", MetricKind::Sli, "", ""}}});
    types.push_back({"Redis", {{"hit_rate", MetricKind::Resource, "", ""}}});
    types.push_back({"Host", {{"cpu_utilization", MetricKind::Resource, "", ""}}});
    std::vector<ConnectionPattern> patterns = {
        {"Microservice", "MySQL", ConnType::Invoke},
        {"Microservice", "Host", ConnType::On},
    };
    return MetadataOntology(std::move(types), std::move(patterns));
}

inline metarca::telemetry::MetricSeries make_series(const std::string& instance,
                                                    const std::string& metric,
                                                    metarca::telemetry::Timestamp t0,
                                                    metarca::telemetry::Timestamp step,
                                                    const std::vector<double>& values) {
    metarca::telemetry::MetricSeries s;
    s.instance_id = instance;
    s.metric_name = metric;
    for (std::size_t i = 0; i < values.size(); ++i) {
        s.timestamps.push_back(t0 + static_cast<metarca::telemetry::Timestamp>(i) * step);
        s.values.push_back(values[i]);
    }
    return s;
}

} // namespace testutil
