#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "semortho/config.hpp"
#include "semortho/core/error.hpp"
#include "semortho/core/random.hpp"
#include "semortho/corpus.hpp"
#include "semortho/embed.hpp"
#include "semortho/label.hpp"
#include "semortho/optimize.hpp"
#include "semortho/report.hpp"

namespace semortho {

struct PipelineOutcome {
    RunReport report;
    std::map<std::string, std::string> artifacts;
    int exit_code = 0;
    std::string error;  // set for degraded runs (exit code != 0 with a report)
};

/// Stage seeds: derive_seed(master, stage name).
inline std::map<std::string, std::uint64_t> stage_seeds(std::uint64_t master) {
    std::map<std::string, std::uint64_t> s;
    for (const char* stage : {"sample", "reduce", "grid"}) s[stage] = derive_seed(master, std::string_view(stage));
    return s;
}

inline std::vector<std::string> record_ids(const std::vector<PromptRecord>& records) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.id);
    return ids;
}

/// Applies the master seed to every reducer, one seed shared by all cells.
inline std::vector<ReducerParams> seeded_reducers(const std::vector<ReducerParams>& reducers, std::uint64_t seed) {
    std::vector<ReducerParams> out = reducers;
    for (auto& r : out) std::visit([&](auto& p) { p.seed = seed; }, r);
    return out;
}

/// Sampled records with their embedding matrices, ready for the grid.
struct PreparedRun {
    RunReport run;
    std::map<std::string, EmbeddingMatrix> embeddings;
};

/// corpus -> filter -> sample -> embeddings.
inline PreparedRun prepare_run(const RunConfig& cfg, std::ostream& log = std::cerr) {
    PreparedRun prep;
    RunReport& run = prep.run;
    run.master_seed = cfg.seed;
    run.stage_seeds = stage_seeds(cfg.seed);
    if (!cfg.path.empty()) run.inputs["config"] = cfg.path;
    for (const auto& s : cfg.sources) run.inputs["corpus:" + (s.corpus_id.empty() ? s.path : s.corpus_id)] = s.path;
    for (const auto& [m, p] : cfg.vector_files) run.inputs["vectors:" + m] = p;
    // corpus
    log << "[corpus] loading " << cfg.sources.size() << " source(s)\n";
    const auto loaded = load_corpus(cfg.sources, cfg.schema);
    if (loaded.empty()) throw ValidationError("corpus: no records loaded");
    run.loaded = loaded.size();
    run.stats_loaded = compute_length_stats(loaded);
    auto part = filter_corpus(loaded, cfg.outlier_method, cfg.outlier_scope, &run.outliers);
    if (part.retained.empty()) throw NumericalError("outlier filter removed every record");
    run.stats_filtered = compute_length_stats(part.retained);
    try {
        run.kde_filtered = length_kdes(part.retained);
        if (cfg.kde_prefilter) run.kde_loaded = length_kdes(loaded);
    } catch (const ValidationError& e) {
        run.warnings.push_back(std::string("length KDE skipped: ") + e.what());
    }
    log << "[corpus] " << loaded.size() << " loaded, " << run.outliers.removed << " removed as outliers\n";

    // sample
    run.power = cfg.power;
    run.n_from_power = !cfg.n_per_cluster;
    const std::size_t n_per_cluster = cfg.n_per_cluster ? *cfg.n_per_cluster : required_sample_size(cfg.power);
    const std::size_t benchmarks = cfg.benchmark_count ? *cfg.benchmark_count : corpus_ids(loaded).size();
    run.plan = plan_total_sample(n_per_cluster, cfg.sample_k_max, cfg.coverage_multiplier, benchmarks);
    auto sampled = stratified_sample(part.retained, run.plan, run.stage_seeds.at("sample"));
    run.sample = std::move(sampled.records);
    run.shortfalls = std::move(sampled.shortfalls);
    for (const auto& s : run.shortfalls)
        run.warnings.push_back("corpus " + s.corpus_id + " supplied " + std::to_string(s.available) + " of " +
                               std::to_string(s.requested) + " requested records");
    log << "[sample] " << run.sample.size() << " records (plan " << run.plan.n_total << ")\n";

    // embeddings
    const auto all_ids = record_ids(loaded);
    const auto sample_ids = record_ids(run.sample);
    auto& embeddings = prep.embeddings;
    for (const auto& [model, path] : cfg.vector_files) {
        auto m = import_embeddings(path, all_ids).subset(sample_ids);
        m.model_id = model;
        embeddings[model] = cfg.normalize ? l2_normalize(std::move(m)) : std::move(m);
    }
    if (cfg.embedding_service) {
        for (const auto& model : cfg.embedding_models) {
            auto ec = *cfg.embedding_service;
            ec.service.model_id = model;
            log << "[embed] fetching " << run.sample.size() << " vectors from " << model << "\n";
            auto m = fetch_embeddings(ec, run.sample);
            m.model_id = model;
            embeddings[model] = cfg.normalize ? l2_normalize(std::move(m)) : std::move(m);
        }
    }
    for (const auto& [model, m] : embeddings) run.embedding_dims[model] = m.dim;

    return prep;
}

/// Builds the grid from the config and runs it on prepared data.
inline void run_config_grid(const RunConfig& cfg, PreparedRun& prep, std::ostream& log = std::cerr) {
    RunReport& run = prep.run;
    std::vector<std::string> models = cfg.grid_models;
    if (models.empty())
        for (const auto& [m, _] : prep.embeddings) models.push_back(m);
    const auto grid = build_grid(models, cfg.metrics, seeded_reducers(cfg.reducers, run.stage_seeds.at("reduce")),
                                 cfg.fixed_k, run.stage_seeds.at("grid"));
    GridOptions gopt = cfg.grid;
    gopt.threads = cfg.threads;
    log << "[grid] running " << grid.size() << " trial(s)\n";
    run.grid = run_grid(run.sample, prep.embeddings, grid, gopt);
    for (const auto& t : run.grid.trials)
        if (!t.ok) log << "[grid] trial " << t.config.id() << " failed: " << t.error << "\n";
}

/// corpus -> filter -> sample -> embeddings -> grid -> label -> report.
/// Validation problems throw before the output directory is created. A label
/// service failure still writes the report (clusters flagged unlabeled) and
/// yields the external-service exit code.
inline PipelineOutcome run_pipeline(const RunConfig& cfg, std::ostream& log = std::cerr) {
    validate_inputs(cfg);
    std::optional<Taxonomy> taxonomy;
    if (cfg.label_source != "none") taxonomy = load_taxonomy(cfg.taxonomy_file);
    std::optional<std::map<std::size_t, std::string>> file_labels;
    if (cfg.label_source == "file") file_labels = read_label_file(cfg.label_file, *taxonomy);

    PipelineOutcome out;
    auto prep = prepare_run(cfg, log);
    run_config_grid(cfg, prep, log);
    out.report = std::move(prep.run);
    RunReport& run = out.report;

    const bool have_winner = !run.grid.trials.empty() && run.grid.trials[run.grid.winner].ok;
    if (!have_winner) {
        out.artifacts = write_report(run, cfg.output_dir);
        out.exit_code = exit_code(ErrorKind::runtime);
        out.error = "every grid trial failed";
        return out;
    }
    const auto& winner = run.grid.trials[run.grid.winner];
    log << run.grid.selection_trace;

    // labels
    run.exemplars = extract_exemplars(winner.model, winner.embedding.coords, run.sample, cfg.exemplars_per_cluster,
                                      cfg.exemplar_rule);
    run.label_source = cfg.label_source;
    if (cfg.label_source == "file") {
        run.labels = labels_from_map(*file_labels, winner.model.k);
    } else if (cfg.label_source == "service") {
        LabelOptions lo = cfg.label;
        lo.threads = cfg.threads;
        try {
            run.labels = request_labels(chat_completion_oracle(cfg.label_service), run.exemplars, *taxonomy, lo);
        } catch (const ServiceError& e) {
            run.label_error = e.what();
            out.exit_code = exit_code(ErrorKind::service);
            out.error = std::string("label service: ") + e.what();
            run.labels = labels_from_map({}, winner.model.k, "is unlabeled: the label service failed");
        }
    } else {
        run.labels = labels_from_map({}, winner.model.k, "is unlabeled (no label source configured)");
    }
    std::vector<std::string> names;
    for (const auto& v : run.labels) {
        names.push_back(v.final_label);
        for (const auto& w : v.warnings) run.warnings.push_back(w);
    }

    run.frequency = frequency_table(winner.model.assignments, winner.model.k, run.sample, names);
    out.artifacts = write_report(run, cfg.output_dir);
    log << "[report] wrote " << out.artifacts.size() << " artifact(s) to " << cfg.output_dir << "\n";
    return out;
}

}  // namespace semortho
