// metarca — offline MCG construction, evidence pipelines, online diagnosis,
// benchmarking, and synthetic incident generation behind one binary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "metarca/errors.hpp"
#include "metarca/eval.hpp"
#include "metarca/evidence.hpp"
#include "metarca/mcg.hpp"
#include "metarca/online.hpp"
#include "metarca/ontology.hpp"
#include "metarca/sim.hpp"
#include "metarca/telemetry.hpp"

namespace fs = std::filesystem;
using namespace metarca;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

// Parameter resolution order: explicit flag, then METARCA_* environment
// variable (both via CLI11), then the config file, then the built-in
// default. The config file is a flat JSON object keyed by snake_case
// parameter names.
struct ConfigFile {
    nlohmann::json doc = nlohmann::json::object();

    void load(const std::string& path) {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file: " + path);
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("config file parse error: ") + e.what());
        }
    }

    template <typename T>
    void fill(const CLI::Option* opt, const char* key, T& value) const {
        if (opt->count() > 0 || !doc.contains(key)) return;
        try {
            value = doc.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ParseError(std::string("config file: bad value for '") + key + "'");
        }
    }
};

struct BeliefFlags {
    double lambda_fr = 0.5;
    double lambda_da = 0.05;
    double decay_k = 0.005;
    double p0 = 0.5;
    CLI::Option* lambda_fr_opt = nullptr;
    CLI::Option* lambda_da_opt = nullptr;
    CLI::Option* decay_k_opt = nullptr;
    CLI::Option* p0_opt = nullptr;

    void attach(CLI::App* cmd) {
        lambda_fr_opt = cmd->add_option("--lambda-fr", lambda_fr,
                                        "Log-Bayes factor of case evidence")
                            ->envname("METARCA_LAMBDA_FR")
                            ->capture_default_str();
        lambda_da_opt = cmd->add_option("--lambda-da", lambda_da,
                                        "Log-Bayes factor of statistical evidence")
                            ->envname("METARCA_LAMBDA_DA")
                            ->capture_default_str();
        decay_k_opt = cmd->add_option("--decay-k", decay_k, "Temporal decay constant per day")
                          ->envname("METARCA_DECAY_K")
                          ->capture_default_str();
        p0_opt = cmd->add_option("--p0", p0, "Bootstrap prior probability")
                     ->envname("METARCA_P0")
                     ->capture_default_str();
    }

    mcg::BeliefConfig config(const ConfigFile& file) {
        file.fill(lambda_fr_opt, "lambda_fr", lambda_fr);
        file.fill(lambda_da_opt, "lambda_da", lambda_da);
        file.fill(decay_k_opt, "decay_k", decay_k);
        file.fill(p0_opt, "p0", p0);
        return {lambda_fr, lambda_da, decay_k, p0};
    }
};

struct OnlineFlags {
    double z_threshold = 3.0;
    double theta_p = 0.3;
    int k_max = 5;
    std::string ranker = "ccb";
    double epsilon = 1e-6;
    int max_iters = 100;
    bool disable_fusion = false;
    CLI::Option* z_threshold_opt = nullptr;
    CLI::Option* theta_p_opt = nullptr;
    CLI::Option* k_max_opt = nullptr;
    CLI::Option* ranker_opt = nullptr;
    CLI::Option* epsilon_opt = nullptr;
    CLI::Option* max_iters_opt = nullptr;

    void attach(CLI::App* cmd) {
        z_threshold_opt = cmd->add_option("--z-threshold", z_threshold,
                                          "Anomaly z-score threshold")
                              ->envname("METARCA_Z_THRESHOLD")
                              ->capture_default_str();
        theta_p_opt = cmd->add_option("--theta-p", theta_p,
                                      "Pruning threshold on fused edge weights")
                          ->envname("METARCA_THETA_P")
                          ->capture_default_str();
        k_max_opt = cmd->add_option("--k-max", k_max,
                                    "Largest lag searched by the correlation score")
                        ->envname("METARCA_K_MAX")
                        ->capture_default_str();
        ranker_opt = cmd->add_option("--ranker", ranker, "Ranking algorithm: ccb|pagerank")
                         ->envname("METARCA_RANKER")
                         ->capture_default_str();
        epsilon_opt = cmd->add_option("--epsilon", epsilon, "Ranking convergence tolerance")
                          ->envname("METARCA_EPSILON")
                          ->capture_default_str();
        max_iters_opt = cmd->add_option("--max-iters", max_iters, "Ranking iteration budget")
                            ->envname("METARCA_MAX_ITERS")
                            ->capture_default_str();
        cmd->add_flag("--disable-fusion", disable_fusion,
                      "Skip contextual weighting and pruning (ablation)");
    }

    online::DiagnoseParams params(const ConfigFile& file) {
        file.fill(z_threshold_opt, "z_threshold", z_threshold);
        file.fill(theta_p_opt, "theta_p", theta_p);
        file.fill(k_max_opt, "k_max", k_max);
        file.fill(ranker_opt, "ranker", ranker);
        file.fill(epsilon_opt, "epsilon", epsilon);
        file.fill(max_iters_opt, "max_iters", max_iters);
        online::DiagnoseParams p;
        p.z_threshold = z_threshold;
        p.theta_p = theta_p;
        p.k_max = k_max;
        p.ranker = online::ranker_from_string(ranker);
        p.epsilon = epsilon;
        p.max_iters = max_iters;
        p.disable_fusion = disable_fusion;
        return p;
    }
};

void print_rejections(const std::vector<evidence::Rejection>& rejections) {
    for (const auto& r : rejections)
        std::cerr << "warning: rejected [" << r.source_id << "]: " << r.reason << "\n";
}

// Input paths resolve like parameters: flag, then environment (CLI11), then
// the config file.
struct PathOpt {
    std::string value;
    CLI::Option* opt = nullptr;

    void attach(CLI::App* cmd, const char* flag, const char* env, const char* help) {
        opt = cmd->add_option(flag, value, help)->envname(env);
    }

    std::string resolve(const ConfigFile& file, const char* key) const {
        if (opt->count() > 0 || !value.empty()) return value;
        if (file.doc.contains(key)) return file.doc.at(key).get<std::string>();
        throw ValidationError(std::string("missing --") + key +
                              " (flag, METARCA_* env, or config file)");
    }
};

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MetaRCA: meta-causal-graph root cause analysis"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "Flat JSON config file (lowest precedence)")
        ->envname("METARCA_CONFIG");
    ConfigFile config_file;
    auto load_config = [&] {
        config_file.load(config_path);
        return std::ref(config_file);
    };

    // ontology validate ------------------------------------------------
    auto* ontology_cmd = app.add_subcommand("ontology", "Ontology utilities");
    ontology_cmd->require_subcommand(1);
    auto* validate_cmd = ontology_cmd->add_subcommand("validate", "Validate an ontology file");
    std::string validate_path;
    validate_cmd->add_option("path", validate_path, "Ontology file")->required();
    validate_cmd->callback([&] {
        const auto ont = ontology::load_ontology(validate_path);
        std::size_t declared = 0;
        for (const auto& p : ont.patterns())
            if (!p.is_internal()) ++declared;
        std::cout << "ontology OK: " << ont.component_types().size() << " component types, "
                  << declared << " declared patterns, hash " << ont.hash() << "\n";
    });

    // mcg bootstrap / update --------------------------------------------
    auto* mcg_cmd = app.add_subcommand("mcg", "Meta causal graph lifecycle");
    mcg_cmd->require_subcommand(1);

    auto* boot_cmd = mcg_cmd->add_subcommand("bootstrap", "Build a skeleton MCG");
    std::string boot_edges, boot_out;
    PathOpt boot_ontology;
    telemetry::Timestamp boot_at = 0;
    BeliefFlags boot_belief;
    boot_ontology.attach(boot_cmd, "--ontology", "METARCA_ONTOLOGY", "Ontology file");
    boot_cmd->add_option("--edges", boot_edges, "Bootstrap edge list")->required();
    boot_cmd->add_option("--at", boot_at, "Bootstrap timestamp (UTC seconds)")->required();
    boot_cmd->add_option("--out", boot_out, "Output MCG snapshot")->required();
    boot_belief.attach(boot_cmd);
    boot_cmd->callback([&] {
        const auto& conf = load_config().get();
        const auto ont = ontology::load_ontology(boot_ontology.resolve(conf, "ontology"));
        const auto specs = mcg::load_bootstrap_edges(boot_edges);
        mcg::BootstrapReport report;
        const auto graph =
            mcg::bootstrap_skeleton(ont, specs, boot_belief.config(conf), boot_at, &report);
        mcg::save_mcg(graph, boot_out);
        print_rejections(report.rejections);
        if (report.accepted == 0) std::cerr << "warning: bootstrap produced an empty graph\n";
        std::cout << "bootstrapped " << report.accepted << " edges ("
                  << report.rejections.size() << " rejected) -> " << boot_out << "\n";
    });

    auto* update_cmd = mcg_cmd->add_subcommand("update", "Fold evidence into an MCG");
    std::string upd_evidence, upd_mode = "batch", upd_out;
    PathOpt upd_mcg, upd_ontology;
    telemetry::Timestamp upd_at = 0;
    upd_mcg.attach(update_cmd, "--mcg", "METARCA_MCG", "Input MCG snapshot");
    upd_ontology.attach(update_cmd, "--ontology", "METARCA_ONTOLOGY", "Ontology file");
    update_cmd->add_option("--evidence", upd_evidence, "Evidence stream (jsonl)")->required();
    update_cmd->add_option("--mode", upd_mode, "batch|stream")->capture_default_str();
    auto* upd_at_opt = update_cmd->add_option("--at", upd_at, "Batch reference time");
    update_cmd->add_option("--out", upd_out, "Output MCG snapshot")->required();
    update_cmd->callback([&] {
        const auto& conf = load_config().get();
        const auto ont = ontology::load_ontology(upd_ontology.resolve(conf, "ontology"));
        auto graph = mcg::load_mcg(upd_mcg.resolve(conf, "mcg"), ont);
        if (graph.ontology_hash_mismatch())
            std::cerr << "warning: MCG ontology hash differs from the supplied ontology\n";
        const auto records = evidence::read_evidence_stream(upd_evidence);

        mcg::UpdateReport total;
        if (upd_mode == "batch") {
            if (upd_at_opt->count() == 0)
                throw ValidationError("--at is required in batch mode");
            total = graph.batch_update(ont, records, upd_at);
        } else if (upd_mode == "stream") {
            telemetry::Timestamp last = std::numeric_limits<telemetry::Timestamp>::min();
            std::size_t lineno = 0;
            for (const auto& r : records) {
                ++lineno;
                if (r.timestamp < last)
                    throw OrderingError("evidence stream is out of time order at record " +
                                        std::to_string(lineno));
                last = r.timestamp;
                const auto report = graph.streaming_update(ont, r, r.timestamp);
                total.applied_case += report.applied_case;
                total.applied_statistical += report.applied_statistical;
                total.created_edges += report.created_edges;
                for (const auto& rej : report.rejections) total.rejections.push_back(rej);
            }
        } else {
            throw ValidationError("unknown mode '" + upd_mode + "' (expected batch|stream)");
        }
        mcg::save_mcg(graph, upd_out);
        print_rejections(total.rejections);
        std::cout << "applied " << total.applied_case << " case + " << total.applied_statistical
                  << " statistical records, created " << total.created_edges << " edges ("
                  << total.rejections.size() << " rejected) -> " << upd_out << "\n";
    });

    // evidence discover / align-case -------------------------------------
    auto* evidence_cmd = app.add_subcommand("evidence", "Evidence extraction pipelines");
    evidence_cmd->require_subcommand(1);

    auto* disc_cmd = evidence_cmd->add_subcommand("discover",
                                                  "Statistical evidence from one incident");
    std::string disc_dataset, disc_out;
    PathOpt disc_ontology;
    double disc_alpha = 0.05;
    int disc_max_lag = 5;
    disc_cmd->add_option("--dataset", disc_dataset, "Incident dataset directory")->required();
    disc_ontology.attach(disc_cmd, "--ontology", "METARCA_ONTOLOGY", "Ontology file");
    disc_cmd->add_option("--alpha", disc_alpha, "Significance level")
        ->envname("METARCA_ALPHA")
        ->capture_default_str();
    disc_cmd->add_option("--max-lag", disc_max_lag, "Largest discovery lag in samples")
        ->capture_default_str();
    disc_cmd->add_option("--out", disc_out, "Output evidence stream")->required();
    disc_cmd->callback([&] {
        const auto& conf = load_config().get();
        const auto ont = ontology::load_ontology(disc_ontology.resolve(conf, "ontology"));
        const auto dataset = telemetry::load_dataset(disc_dataset, ont);
        const auto discovery = evidence::discover_links(dataset, disc_alpha, disc_max_lag);
        for (const auto& note : discovery.notices) std::cerr << "notice: " << note << "\n";
        const auto aligned = evidence::align_links_to_patterns(discovery.links, dataset, ont);
        evidence::write_evidence_stream(aligned.records, disc_out);
        print_rejections(aligned.rejections);
        std::cout << "discovered " << discovery.links.size() << " links, aligned "
                  << aligned.records.size() << " statistical records ("
                  << aligned.rejections.size() << " rejected) -> " << disc_out << "\n";
    });

    auto* align_cmd = evidence_cmd->add_subcommand("align-case",
                                                   "Case evidence from report extracts");
    std::string align_extracts, align_out;
    PathOpt align_aliases, align_ontology;
    align_cmd->add_option("--extracts", align_extracts, "Raw case extract file")->required();
    align_aliases.attach(align_cmd, "--aliases", "METARCA_ALIASES", "Alias map file");
    align_ontology.attach(align_cmd, "--ontology", "METARCA_ONTOLOGY", "Ontology file");
    align_cmd->add_option("--out", align_out, "Output evidence stream")->required();
    align_cmd->callback([&] {
        const auto& conf = load_config().get();
        const auto ont = ontology::load_ontology(align_ontology.resolve(conf, "ontology"));
        const auto extracts = evidence::load_case_extracts(align_extracts);
        const auto aliases = evidence::load_alias_map(align_aliases.resolve(conf, "aliases"));
        const auto result = evidence::align_case_extracts(extracts, ont, aliases);
        evidence::write_evidence_stream(result.records, align_out);
        print_rejections(result.rejections);
        std::cout << "aligned " << result.records.size() << " case records ("
                  << result.rejections.size() << " rejected) -> " << align_out << "\n";
    });

    // diagnose ------------------------------------------------------------
    auto* diag_cmd = app.add_subcommand("diagnose", "Diagnose one incident dataset");
    std::string diag_dataset, diag_out, diag_dot_dir, diag_licg_dir;
    PathOpt diag_mcg, diag_ontology;
    int diag_top_k = 5;
    double diag_dot_min_weight = 0.0;
    OnlineFlags diag_flags;
    diag_mcg.attach(diag_cmd, "--mcg", "METARCA_MCG", "MCG snapshot");
    diag_ontology.attach(diag_cmd, "--ontology", "METARCA_ONTOLOGY", "Ontology file");
    diag_cmd->add_option("--dataset", diag_dataset, "Incident dataset directory")->required();
    diag_cmd->add_option("--top-k", diag_top_k, "Entries to print")->capture_default_str();
    diag_cmd->add_option("--out", diag_out, "Write ranked output document");
    diag_cmd->add_option("--export-dot", diag_dot_dir,
                         "Write instantiated/fused/pruned DOT files into this directory");
    diag_cmd->add_option("--dot-min-weight", diag_dot_min_weight,
                         "Render-only filter: hide edges lighter than this")
        ->capture_default_str();
    diag_cmd->add_option("--export-licg", diag_licg_dir,
                         "Write instantiated/fused/pruned LICG dumps into this directory");
    diag_flags.attach(diag_cmd);
    diag_cmd->callback([&] {
        const auto& conf = load_config().get();
        const auto ont = ontology::load_ontology(diag_ontology.resolve(conf, "ontology"));
        const auto graph = mcg::load_mcg(diag_mcg.resolve(conf, "mcg"), ont);
        if (graph.ontology_hash_mismatch())
            std::cerr << "warning: MCG ontology hash differs from the supplied ontology\n";
        const auto dataset = telemetry::load_dataset(diag_dataset, ont);
        auto params = diag_flags.params(conf);
        params.keep_stages = !diag_dot_dir.empty() || !diag_licg_dir.empty();
        const auto result = online::diagnose(graph, ont, dataset, params);

        for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
        if (!result.incident_detected) {
            std::cout << "no incident detected\n";
        } else {
            std::cout << "top candidates:\n";
            char line[160];
            int shown = 0;
            for (const auto& e : result.ranked.entries) {
                if (shown >= diag_top_k) break;
                std::snprintf(line, sizeof(line), "  %2d. %s.%s  score %.6f\n", ++shown,
                              e.instance_id.c_str(), e.metric_name.c_str(), e.score);
                std::cout << line;
            }
            std::cout << "service ranking:\n";
            shown = 0;
            for (const auto& s : result.ranked.service_ranking) {
                if (shown >= diag_top_k) break;
                std::snprintf(line, sizeof(line), "  %2d. %s  score %.6f\n", ++shown,
                              s.instance_id.c_str(), s.score);
                std::cout << line;
            }
            std::snprintf(line, sizeof(line), "rca time: %.4f s\n", result.timing_seconds);
            std::cout << line;
        }

        if (!diag_out.empty()) {
            std::ofstream out(diag_out);
            if (!out) throw IoError("cannot write ranked output: " + diag_out);
            out << online::ranked_output_text(result, true);
        }
        if (!diag_dot_dir.empty()) {
            fs::create_directories(diag_dot_dir);
            auto write_stage = [&](const online::Licg& licg, const std::string& name) {
                std::ofstream out(fs::path(diag_dot_dir) / (name + ".dot"));
                if (!out) throw IoError("cannot write DOT file under " + diag_dot_dir);
                out << online::to_dot(licg, name, diag_dot_min_weight);
            };
            write_stage(result.instantiated, "instantiated");
            write_stage(result.fused, "fused");
            write_stage(result.pruned, "pruned");
        }
        if (!diag_licg_dir.empty()) {
            fs::create_directories(diag_licg_dir);
            auto write_stage = [&](const online::Licg& licg, const std::string& name) {
                std::ofstream out(fs::path(diag_licg_dir) / (name + ".json"));
                if (!out) throw IoError("cannot write LICG dump under " + diag_licg_dir);
                out << online::licg_to_json_text(licg);
            };
            write_stage(result.instantiated, "instantiated");
            write_stage(result.fused, "fused");
            write_stage(result.pruned, "pruned");
        }
    });

    // bench ----------------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "Benchmark over a corpus with ground truth");
    std::string bench_corpus, bench_report;
    PathOpt bench_mcg, bench_ontology;
    int bench_workers = 1;
    OnlineFlags bench_flags;
    bench_mcg.attach(bench_cmd, "--mcg", "METARCA_MCG", "MCG snapshot");
    bench_ontology.attach(bench_cmd, "--ontology", "METARCA_ONTOLOGY", "Ontology file");
    bench_cmd->add_option("--corpus", bench_corpus, "Corpus directory")->required();
    bench_cmd->add_option("--report", bench_report, "Output report file");
    bench_cmd->add_option("--workers", bench_workers, "Parallel case workers")
        ->envname("METARCA_WORKERS")
        ->capture_default_str();
    bench_flags.attach(bench_cmd);
    bench_cmd->callback([&] {
        const auto& conf = load_config().get();
        const auto ont = ontology::load_ontology(bench_ontology.resolve(conf, "ontology"));
        const auto graph = mcg::load_mcg(bench_mcg.resolve(conf, "mcg"), ont);
        eval::BenchmarkParams params;
        params.diagnose = bench_flags.params(conf);
        params.workers = bench_workers;
        const auto report = eval::run_benchmark(bench_corpus, graph, ont, params);
        for (const auto& s : report.skipped)
            std::cerr << "warning: skipped case " << s.case_id << ": " << s.reason << "\n";
        std::cout << report.human_table();
        if (!bench_report.empty()) {
            std::ofstream out(bench_report);
            if (!out) throw IoError("cannot write report: " + bench_report);
            out << report.report_json_text();
        }
    });

    // simulate ---------------------------------------------------------------
    auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic incident corpus");
    std::string sim_config_path, sim_out, sim_ontology, sim_mcg;
    int sim_n = 1;
    std::uint64_t sim_seed = 0;
    bool sim_seed_set = false;
    sim_cmd->add_option("--config", sim_config_path, "Simulator config file")->required();
    sim_cmd->add_option("--n", sim_n, "Number of cases")->capture_default_str();
    sim_cmd->add_option("--out", sim_out, "Corpus output directory")->required();
    sim_cmd->add_option("--ontology", sim_ontology, "Ontology file (overrides config)");
    sim_cmd->add_option("--mcg", sim_mcg, "Validate planted edges against this MCG snapshot");
    sim_cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { sim_seed = v; sim_seed_set = true; },
        "Corpus seed (defaults to the config seed)");
    sim_cmd->callback([&] {
        auto config = sim::load_sim_config(sim_config_path);
        const std::string ontology_path =
            !sim_ontology.empty() ? sim_ontology : config.ontology_path;
        if (ontology_path.empty())
            throw ValidationError("no ontology given (config 'ontology' or --ontology)");
        const auto ont = ontology::load_ontology(ontology_path);
        std::optional<mcg::MetaCausalGraph> graph;
        if (!sim_mcg.empty()) graph = mcg::load_mcg(sim_mcg, ont);
        const auto manifest =
            sim::generate_corpus(config, sim_n, sim_seed_set ? sim_seed : config.seed, sim_out,
                                 ont, graph ? &*graph : nullptr);
        std::cout << "generated " << manifest.size() << " cases -> " << sim_out << "\n";
    });

    // Parent-level --config may appear after the subcommand name.
    std::function<void(CLI::App*)> enable_fallthrough = [&](CLI::App* cmd) {
        for (auto* sub : cmd->get_subcommands({})) {
            sub->fallthrough(true);
            enable_fallthrough(sub);
        }
    };
    enable_fallthrough(&app);

    // Subcommand bodies run inside parse; the guard maps their exceptions
    // to the documented exit codes (1 validation, 2 I/O).
    return guarded([&]() -> int {
        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            return app.exit(e) == 0 ? kExitOk : kExitValidation;
        }
        return kExitOk;
    });
}
