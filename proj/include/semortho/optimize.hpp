#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semortho/cluster.hpp"
#include "semortho/core/error.hpp"
#include "semortho/core/random.hpp"
#include "semortho/core/text.hpp"
#include "semortho/embed.hpp"
#include "semortho/geometry.hpp"
#include "semortho/reduce.hpp"

namespace semortho {

/// One grid cell. The metric governs both the reducer's neighbor computations
/// and the 2D clustering of that trial.
struct PipelineConfig {
    std::string embedding_model_id;
    MetricKind metric = MetricKind::euclidean;
    ReducerParams reducer = UmapParams{};
    std::optional<std::size_t> fixed_k;  // nullopt: choose k by silhouette via select_k
    std::uint64_t seed = 0;

    std::string reducer_label() const {
        if (const auto* u = std::get_if<UmapParams>(&reducer)) return "umap-nn" + std::to_string(u->n_neighbors);
        return "tsne-perp" + format_double(std::get<TsneParams>(reducer).perplexity);
    }

    std::string id() const { return embedding_model_id + "/" + to_string(metric) + "/" + reducer_label(); }
};

struct TrialResult {
    PipelineConfig config;
    bool ok = false;
    std::string error;
    std::size_t k_used = 0;
    double silhouette_mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::chrono::duration<double> wall_time{0};
    std::chrono::duration<double> reducer_time{0};
    std::chrono::duration<double> cluster_time{0};
    std::vector<KDiagnostic> diagnostics;
    std::optional<std::size_t> k_silhouette;
    std::optional<std::size_t> k_elbow;
    std::optional<bool> k_agree;
    Embedding2D embedding;
    KMeansModel model;
    std::vector<double> per_point_silhouette;
};

struct GridReport {
    std::vector<TrialResult> trials;
    std::size_t winner = 0;
    std::vector<std::size_t> candidates;
    std::string selection_trace;
};

struct GridOptions {
    SelectKOptions select;               // k range and k-means restarts for auto-k trials
    std::size_t bootstrap_samples = 1000;
    unsigned threads = 1;
    bool bench_serial = false;           // trials one at a time, each with the full thread budget
    double time_tolerance = 0.0;         // relative band for "equally fast"; 0 = strict minimum
};

/// Cartesian product, ordered models x metrics x reducers.
inline std::vector<PipelineConfig> build_grid(const std::vector<std::string>& models,
                                              const std::vector<MetricKind>& metrics,
                                              const std::vector<ReducerParams>& reducers,
                                              std::optional<std::size_t> fixed_k = std::nullopt,
                                              std::uint64_t seed = 0) {
    if (models.empty()) throw ValidationError("grid: embedding model axis is empty");
    if (metrics.empty()) throw ValidationError("grid: metric axis is empty");
    if (reducers.empty()) throw ValidationError("grid: reducer axis is empty");
    std::vector<PipelineConfig> grid;
    for (const auto& m : models)
        for (auto metric : metrics)
            for (const auto& r : reducers) grid.push_back({m, metric, r, fixed_k, seed});
    return grid;
}

/// Runs reduce -> cluster -> silhouette -> bootstrap for one cell. Timing covers
/// exactly those stages.
inline TrialResult run_trial(const EmbeddingMatrix& embeddings, const PipelineConfig& cfg, const GridOptions& opt,
                             unsigned threads) {
    using clock = std::chrono::steady_clock;
    TrialResult t;
    t.config = cfg;
    try {
        const auto t0 = clock::now();
        const Metric high_metric = Metric::fit(cfg.metric, embeddings.vectors);
        t.embedding = reduce(embeddings.vectors, embeddings.row_ids, cfg.reducer, high_metric, threads);
        const auto t1 = clock::now();

        const RowMatrix& coords = t.embedding.coords;
        const Metric low_metric = Metric::fit(cfg.metric, coords);
        if (cfg.fixed_k) {
            t.model = kmeans_fit(coords, *cfg.fixed_k, low_metric, derive_seed(cfg.seed, "kmeans"), opt.select.kmeans);
        } else {
            SelectKOptions so = opt.select;
            so.threads = threads;
            so.bootstrap_samples = 0;
            so.k_max = std::min(so.k_max, coords.rows());
            auto sel = select_k(coords, low_metric, derive_seed(cfg.seed, "select-k"), so);
            t.k_silhouette = sel.k_silhouette;
            t.k_elbow = sel.k_elbow;
            t.k_agree = sel.agree;
            t.diagnostics = sel.diagnostics;
            t.model = std::move(sel.models.at(sel.k_silhouette - so.k_min));
        }
        t.k_used = t.model.k;
        const auto sil = silhouette(coords, t.model.assignments, low_metric, threads);
        const auto boot = bootstrap_silhouette(coords, t.model.assignments, low_metric, opt.bootstrap_samples,
                                               derive_seed(cfg.seed, "bootstrap"), threads);
        const auto t2 = clock::now();

        t.silhouette_mean = sil.mean;
        t.per_point_silhouette = sil.per_point;
        t.ci_low = boot.ci_low;
        t.ci_high = boot.ci_high;
        t.reducer_time = t1 - t0;
        t.cluster_time = t2 - t1;
        t.wall_time = t2 - t0;
        t.ok = true;
    } catch (const std::exception& e) {
        t.ok = false;
        t.error = e.what();
    }
    return t;
}

struct Selection {
    std::size_t winner = 0;
    std::vector<std::size_t> candidates;
    std::string trace;
};

/// Candidates are successful trials whose CI overlaps the CI of the
/// highest-silhouette trial. Among candidates, those within
/// (1 + time_tolerance) of the fastest wall time are equally fast; the winner
/// is the one with the highest silhouette (then lowest index).
inline Selection select_best(const std::vector<TrialResult>& trials, double time_tolerance = 0.0) {
    if (time_tolerance < 0.0) throw ValidationError("time tolerance must be nonnegative");
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < trials.size(); ++i)
        if (trials[i].ok && (!best || trials[i].silhouette_mean > trials[*best].silhouette_mean)) best = i;
    if (!best) throw NumericalError("grid has no successful trials to select from");
    const auto& top = trials[*best];

    Selection s;
    double fastest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto& t = trials[i];
        if (!t.ok || t.ci_low > top.ci_high || top.ci_low > t.ci_high) continue;
        s.candidates.push_back(i);
        fastest = std::min(fastest, t.wall_time.count());
    }
    const double limit = fastest * (1.0 + time_tolerance);
    std::optional<std::size_t> winner;
    for (std::size_t i : s.candidates) {
        const auto& t = trials[i];
        if (t.wall_time.count() > limit) continue;
        if (!winner || t.silhouette_mean > trials[*winner].silhouette_mean) winner = i;
    }
    s.winner = *winner;

    std::ostringstream tr;
    tr << "highest silhouette: " << top.config.id() << " (" << format_fixed(top.silhouette_mean, 4) << ", 95% CI ["
       << format_fixed(top.ci_low, 4) << ", " << format_fixed(top.ci_high, 4) << "])\n";
    tr << "trials with overlapping CI (" << s.candidates.size() << "):\n";
    for (std::size_t i : s.candidates) {
        const auto& t = trials[i];
        tr << "  " << t.config.id() << "  silhouette " << format_fixed(t.silhouette_mean, 4) << "  CI ["
           << format_fixed(t.ci_low, 4) << ", " << format_fixed(t.ci_high, 4) << "]  time "
           << format_fixed(t.wall_time.count(), 3) << "s\n";
    }
    tr << "rule: fastest among overlapping trials";
    if (time_tolerance > 0.0)
        tr << " (times within " << format_fixed(100.0 * time_tolerance, 1)
           << "% of the fastest count as equal; highest silhouette breaks the tie)";
    tr << "\nwinner: " << trials[s.winner].config.id() << "\n";
    s.trace = tr.str();
    return s;
}

/// Runs every cell against its model's embeddings. Failed cells are recorded,
/// not fatal. Results other than timings are deterministic and independent of
/// the thread budget.
inline GridReport run_grid(const std::vector<PromptRecord>& records,
                           const std::map<std::string, EmbeddingMatrix>& embeddings_by_model,
                           const std::vector<PipelineConfig>& grid, const GridOptions& opt) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.id);
    for (const auto& cfg : grid) {
        auto it = embeddings_by_model.find(cfg.embedding_model_id);
        if (it == embeddings_by_model.end())
            throw ValidationError("grid: no embedding matrix for model '" + cfg.embedding_model_id + "'");
        if (it->second.row_ids != ids)
            throw ValidationError("grid: embeddings for '" + cfg.embedding_model_id + "' are not aligned to the corpus");
    }
    GridReport rep;
    rep.trials.resize(grid.size());
    const unsigned threads = std::max(1u, opt.threads);
    if (opt.bench_serial || threads == 1) {
        for (std::size_t i = 0; i < grid.size(); ++i)
            rep.trials[i] = run_trial(embeddings_by_model.at(grid[i].embedding_model_id), grid[i], opt, threads);
    } else {
        parallel_for(grid.size(), threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i)
                rep.trials[i] = run_trial(embeddings_by_model.at(grid[i].embedding_model_id), grid[i], opt, 1);
        });
    }
    bool any_ok = false;
    for (const auto& t : rep.trials) any_ok = any_ok || t.ok;
    if (any_ok) {
        auto sel = select_best(rep.trials, opt.time_tolerance);
        rep.winner = sel.winner;
        rep.candidates = std::move(sel.candidates);
        rep.selection_trace = std::move(sel.trace);
    } else {
        rep.selection_trace = "no successful trials";
    }
    return rep;
}

}  // namespace semortho
