#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metarca/mcg.hpp"
#include "metarca/ontology.hpp"
#include "metarca/telemetry.hpp"

namespace metarca::sim {

using telemetry::Timestamp;

/// Deterministic RNG with hand-rolled samplers so generated corpora are
/// byte-identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();                          // [0, 1)
    double uniform_range(double lo, double hi);
    int uniform_int(int lo, int hi);           // inclusive
    double normal();                           // Box-Muller
    double trunc_normal(double limit);         // rejection-sampled |z| <= limit

private:
    std::mt19937_64 engine_;
};

enum class TopologyShape { Chain, Tree, RandomDag };
enum class FaultType { TpsSurge, CpuOverload, DbLatency };

std::string to_string(TopologyShape shape);
std::string to_string(FaultType type);
TopologyShape topology_shape_from_string(const std::string& s);
FaultType fault_type_from_string(const std::string& s);

struct FaultSpec {
    std::string target_rule = "uniform";   // uniform over type-eligible instances
    std::string target_instance;           // overrides the rule when non-empty
    std::vector<FaultType> types = {FaultType::TpsSurge, FaultType::CpuOverload,
                                    FaultType::DbLatency};
    double magnitude_sigma = 6.0;
};

struct PropagationSpec {
    double weight_min = 0.5;
    double weight_max = 0.9;
    int lag_min = 1;
    int lag_max = 3;
    double noise_sigma = 0.1;
    double fault_wander_sigma = 2.0;   // in-window variation of the fault signal
    double cascade_floor_sigma = 2.0;  // stop propagating below this level
};

struct SamplingSpec {
    Timestamp interval_seconds = 30;
    int n_baseline = 120;
    int n_fault = 60;
};

struct SimConfig {
    std::uint64_t seed = 1;
    int n_services = 10;
    TopologyShape topology_shape = TopologyShape::RandomDag;
    std::string ontology_path;  // informational; callers load and pass the ontology
    FaultSpec fault;
    PropagationSpec propagation;
    SamplingSpec sampling;

    void validate() const;
};

struct PlantedEdge {
    telemetry::SeriesKey cause;
    telemetry::SeriesKey effect;
    double weight = 0.0;
    int lag = 0;
    mcg::MetaEdgeKey meta_key;
};

struct GroundTruthCase {
    telemetry::IncidentDataset dataset;
    std::vector<PlantedEdge> planted_edges;
};

/// Deterministic in config.seed. When an MCG is supplied every planted edge
/// must correspond to one of its meta-edges; otherwise only the ontology
/// patterns are checked.
GroundTruthCase generate_case(const SimConfig& config,
                              const ontology::MetadataOntology& ontology,
                              const mcg::MetaCausalGraph* graph = nullptr);

struct CorpusManifestEntry {
    std::string case_id;
    std::uint64_t seed = 0;
    telemetry::GroundTruth ground_truth;
};

/// Writes n_cases dataset directories plus a manifest under out_dir. Case
/// seeds derive from the corpus seed; fault types cycle through the
/// configured list.
std::vector<CorpusManifestEntry> generate_corpus(const SimConfig& config_template,
                                                 int n_cases, std::uint64_t corpus_seed,
                                                 const std::string& out_dir,
                                                 const ontology::MetadataOntology& ontology,
                                                 const mcg::MetaCausalGraph* graph = nullptr);

SimConfig load_sim_config(const std::string& path);

} // namespace metarca::sim
