#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "semortho/semortho.hpp"

namespace fs = std::filesystem;
using namespace semortho;

namespace {

// Stage commands read corpora from --corpus ID=PATH (repeatable) or a config.
struct CorpusArgs {
    std::vector<std::string> corpus;
    std::string format = "jsonl";
    std::string config;

    void add(CLI::App* app) {
        app->add_option("--corpus", corpus, "Corpus file as ID=PATH (repeatable)");
        app->add_option("--format", format, "Corpus format")->check(CLI::IsMember({"jsonl", "delimited"}));
        app->add_option("--config", config, "Read corpus sources from this run config instead");
    }

    std::vector<PromptRecord> load() const {
        if (!config.empty()) {
            const auto cfg = load_run_config(config);
            return load_corpus(cfg.sources, cfg.schema);
        }
        if (corpus.empty()) throw ValidationError("give --corpus ID=PATH or --config");
        std::vector<CorpusSource> sources;
        for (const auto& c : corpus) {
            const auto eq = c.find('=');
            if (eq == std::string::npos) sources.push_back({"", c});
            else sources.push_back({c.substr(0, eq), c.substr(eq + 1)});
        }
        CorpusSchema schema;
        schema.format = format == "delimited" ? CorpusFormat::delimited : CorpusFormat::jsonl;
        return load_corpus(sources, schema);
    }
};

void write_records_jsonl(const std::string& path, const std::vector<PromptRecord>& records) {
    std::string out;
    for (const auto& r : records)
        out += nlohmann::json{{"id", r.id}, {"corpus_id", r.corpus_id}, {"text", r.text}}.dump() + "\n";
    write_text_file(path, out);
}

/// id -> cluster table written by `cluster`.
std::map<std::string, std::size_t> read_assignments(const std::string& path) {
    const auto rows = parse_delimited(read_file(path));
    if (rows.empty() || rows[0].size() < 2 || rows[0][0] != "id" || rows[0][1] != "cluster")
        throw ValidationError(path + ": expected header 'id,cluster'");
    std::map<std::string, std::size_t> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() < 2) throw ValidationError(path + ": short row " + std::to_string(r + 1));
        out[rows[r][0]] = static_cast<std::size_t>(parse_int(rows[r][1], "cluster"));
    }
    return out;
}

/// Records, coordinates and a k-means-like model aligned on the coordinate
/// file's row order. Centroids are the 2D cluster means.
struct ClusteredLayout {
    std::vector<PromptRecord> records;
    Embedding2D coords;
    KMeansModel model;
};

ClusteredLayout load_layout(const CorpusArgs& corpus, const std::string& coords_path,
                            const std::string& assignments_path) {
    ClusteredLayout l;
    l.coords = read_coords_csv(coords_path);
    const auto assign = read_assignments(assignments_path);
    std::map<std::string, PromptRecord> by_id;
    for (auto& r : corpus.load()) by_id.emplace(r.id, std::move(r));
    std::size_t k = 0;
    for (const auto& id : l.coords.row_ids) {
        auto rec = by_id.find(id);
        if (rec == by_id.end()) throw ValidationError("coordinate id '" + id + "' is not in the corpus");
        auto a = assign.find(id);
        if (a == assign.end()) throw ValidationError("coordinate id '" + id + "' has no cluster assignment");
        l.records.push_back(rec->second);
        l.model.assignments.push_back(a->second);
        k = std::max(k, a->second + 1);
    }
    l.model.k = k;
    l.model.centroids = RowMatrix(k, 2);
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < l.records.size(); ++i) {
        const auto c = l.model.assignments[i];
        l.model.centroids(c, 0) += l.coords.coords(i, 0);
        l.model.centroids(c, 1) += l.coords.coords(i, 1);
        counts[c] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0.0) throw ValidationError("cluster " + std::to_string(c) + " has no members");
        l.model.centroids(c, 0) /= counts[c];
        l.model.centroids(c, 1) /= counts[c];
    }
    return l;
}

int report_failure(const Error& e) {
    const char* stage = e.kind() == ErrorKind::validation ? "validation" : e.kind() == ErrorKind::service ? "service" : "runtime";
    std::cerr << "error (" << stage << "): " << e.what() << "\n";
    if (e.kind() == ErrorKind::validation) std::cerr << "hint: check the config file and flags; see --help\n";
    if (e.kind() == ErrorKind::service) std::cerr << "hint: check the endpoint, token variable and network access\n";
    return exit_code(e.kind());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic orthogonality analysis of safety benchmark prompt corpora"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    unsigned threads = 1;
    app.add_option("--threads", threads, "Worker threads for each stage")->check(CLI::PositiveNumber);

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "Run corpus -> embed -> grid -> label -> report from a config");
    std::string config_path, output_dir, labels_file;
    std::optional<std::uint64_t> seed;
    bool bench_serial = false;
    pipe->add_option("config", config_path, "Run config (JSON, comments allowed)")->required();
    pipe->add_option("--seed", seed, "Master seed (overrides the config)");
    pipe->add_option("--output", output_dir, "Output directory (overrides the config)");
    pipe->add_option("--labels-from-file", labels_file, "Read cluster,label assignments instead of calling a service");
    pipe->add_flag("--bench-serial", bench_serial, "Run grid trials one at a time for cleaner timings");

    // sample-size
    auto* ss = app.add_subcommand("sample-size", "Per-cluster and total sample sizes");
    double d = 0.5, alpha = 0.05, power = 0.8, multiplier = 1.0;
    std::string tails = "two";
    std::optional<std::size_t> n_per_cluster;
    std::size_t k_max = 15, benchmarks = 5;
    bool as_json = false;
    ss->add_option("--d", d, "Cohen's effect size");
    ss->add_option("--alpha", alpha, "Significance level");
    ss->add_option("--power", power, "Statistical power");
    ss->add_option("--tails", tails, "one or two")->check(CLI::IsMember({"one", "two"}));
    ss->add_option("--n-per-cluster", n_per_cluster, "Use this per-cluster n instead of the power analysis");
    ss->add_option("--k-max", k_max, "Largest cluster count considered");
    ss->add_option("--multiplier", multiplier, "Coverage multiplier");
    ss->add_option("--benchmarks", benchmarks, "Number of benchmark corpora");
    ss->add_flag("--json", as_json, "Machine-readable output");

    // filter
    auto* flt = app.add_subcommand("filter", "Remove prompt-length outliers");
    CorpusArgs flt_corpus;
    flt_corpus.add(flt);
    std::string method = "zscore", scope = "pooled", retained_out, removed_out;
    flt->add_option("--method", method, "zscore or iqr")->check(CLI::IsMember({"zscore", "iqr"}));
    flt->add_option("--scope", scope, "pooled or per_corpus")->check(CLI::IsMember({"pooled", "per_corpus"}));
    flt->add_option("--retained", retained_out, "Write retained records (JSONL)");
    flt->add_option("--removed", removed_out, "Write removed records (JSONL)");
    flt->add_flag("--json", as_json, "Machine-readable summary");

    // reduce
    auto* red = app.add_subcommand("reduce", "Project a vector file to 2D");
    std::string vectors, reducer = "umap", metric = "euclidean", coords_out;
    std::size_t n_neighbors = 15, epochs = 200, iterations = 1000;
    double perplexity = 30.0, min_dist = 0.1;
    bool no_normalize = false;
    std::uint64_t reduce_seed = 42;
    red->add_option("--vectors", vectors, "Vector file")->required();
    red->add_option("--method", reducer, "umap or tsne")->check(CLI::IsMember({"umap", "tsne"}));
    red->add_option("--metric", metric, "euclidean or mahalanobis")->check(CLI::IsMember({"euclidean", "mahalanobis"}));
    red->add_option("--n-neighbors", n_neighbors, "UMAP neighborhood size");
    red->add_option("--min-dist", min_dist, "UMAP minimum distance");
    red->add_option("--epochs", epochs, "UMAP epochs");
    red->add_option("--perplexity", perplexity, "t-SNE perplexity");
    red->add_option("--iterations", iterations, "t-SNE iterations");
    red->add_option("--seed", reduce_seed, "Seed");
    red->add_flag("--no-normalize", no_normalize, "Skip L2 normalization of the vectors");
    red->add_option("--output", coords_out, "Coordinate table (id,x,y)")->required();

    // cluster
    auto* clu = app.add_subcommand("cluster", "k-means on 2D coordinates");
    std::string coords_in, assignments_out, diagnostics_out;
    std::optional<std::size_t> k_fixed;
    std::size_t k_min = 2, k_max_cluster = 15, restarts = 4, bootstrap = 1000;
    std::uint64_t cluster_seed = 42;
    clu->add_option("--coords", coords_in, "Coordinate table (id,x,y)")->required();
    clu->add_option("--k", k_fixed, "Fixed k (default: choose by silhouette)");
    clu->add_option("--k-min", k_min, "Smallest k for automatic selection");
    clu->add_option("--k-max", k_max_cluster, "Largest k for automatic selection");
    clu->add_option("--metric", metric, "euclidean or mahalanobis")->check(CLI::IsMember({"euclidean", "mahalanobis"}));
    clu->add_option("--restarts", restarts, "k-means restarts");
    clu->add_option("--bootstrap", bootstrap, "Bootstrap resamples for the silhouette interval");
    clu->add_option("--seed", cluster_seed, "Seed");
    clu->add_option("--output", assignments_out, "Assignment table (id,cluster)")->required();
    clu->add_option("--diagnostics", diagnostics_out, "Per-k table (k,inertia,silhouette)");

    // grid
    auto* grd = app.add_subcommand("grid", "Run the configuration grid from a config and select the winner");
    std::string grid_config, grid_out;
    grd->add_option("config", grid_config, "Run config")->required();
    grd->add_option("--output", grid_out, "Directory for grid.csv, timings.csv, k_diagnostics.csv, selection.txt");
    grd->add_option("--seed", seed, "Master seed (overrides the config)");
    grd->add_flag("--bench-serial", bench_serial, "Run grid trials one at a time");

    // label
    auto* lab = app.add_subcommand("label", "Label clusters from exemplar prompts");
    CorpusArgs lab_corpus;
    lab_corpus.add(lab);
    std::string assignments_in, taxonomy_path = std::string(SEMORTHO_DATA_DIR) + "/taxonomy.txt", labels_out,
                                exemplars_out, rule = "nearest_centroid", endpoint, model, token_env;
    std::size_t per_cluster = 4, runs = 5;
    lab->add_option("--coords", coords_in, "Coordinate table (id,x,y)")->required();
    lab->add_option("--assignments", assignments_in, "Assignment table (id,cluster)")->required();
    lab->add_option("--taxonomy", taxonomy_path, "Taxonomy file");
    lab->add_option("--per-cluster", per_cluster, "Exemplars per cluster");
    lab->add_option("--rule", rule, "nearest_centroid or boundary")
        ->check(CLI::IsMember({"nearest_centroid", "boundary"}));
    lab->add_option("--runs", runs, "Labeling calls per cluster");
    lab->add_option("--endpoint", endpoint, "Chat-completions URL");
    lab->add_option("--model", model, "Labeling model name");
    lab->add_option("--token-env", token_env, "Environment variable holding the bearer token");
    lab->add_option("--labels-from-file", labels_file, "Read cluster,label assignments instead of calling a service");
    lab->add_option("--output", labels_out, "Label table")->required();
    lab->add_option("--exemplars", exemplars_out, "Exemplar table");

    // report
    auto* rep = app.add_subcommand("report", "Frequency table, length KDE and scatter plot");
    CorpusArgs rep_corpus;
    rep_corpus.add(rep);
    std::string labels_in, report_dir;
    rep->add_option("--coords", coords_in, "Coordinate table (id,x,y)")->required();
    rep->add_option("--assignments", assignments_in, "Assignment table (id,cluster)")->required();
    rep->add_option("--labels", labels_in, "Label table (cluster,label,...)");
    rep->add_option("--output", report_dir, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (pipe->parsed()) {
            auto cfg = load_run_config(config_path);
            if (seed) cfg.seed = *seed;
            if (!output_dir.empty()) cfg.output_dir = output_dir;
            if (!labels_file.empty()) {
                cfg.label_source = "file";
                cfg.label_file = labels_file;
            }
            if (bench_serial) cfg.grid.bench_serial = true;
            if (app.get_option("--threads")->count()) cfg.threads = threads;
            const auto outcome = run_pipeline(cfg);
            if (!outcome.report.grid.trials.empty() && outcome.report.grid.trials[outcome.report.grid.winner].ok) {
                const auto& w = outcome.report.grid.trials[outcome.report.grid.winner];
                std::cout << "winner: " << w.config.id() << "  k=" << w.k_used << "  silhouette "
                          << format_fixed(w.silhouette_mean, 4) << " [" << format_fixed(w.ci_low, 4) << ", "
                          << format_fixed(w.ci_high, 4) << "]\n\n"
                          << outcome.report.frequency.counts_csv();
            }
            std::cout << "report: " << outcome.artifacts.at("report") << "\n";
            if (outcome.exit_code != 0) std::cerr << "error: " << outcome.error << "\n";
            return outcome.exit_code;
        }

        if (ss->parsed()) {
            PowerParams p{d, alpha, power, tails == "one" ? Tails::one : Tails::two};
            std::optional<double> exact;
            std::size_t n = 0;
            if (n_per_cluster) {
                n = *n_per_cluster;
            } else {
                p.validate();
                exact = sample_size_exact(p);
                n = required_sample_size(p);
            }
            const auto plan = plan_total_sample(n, k_max, multiplier, benchmarks);
            if (as_json) {
                nlohmann::json j = {{"n_per_cluster", plan.n_per_cluster}, {"k_max", plan.k_max},
                                    {"coverage_multiplier", plan.coverage_multiplier},
                                    {"benchmark_count", plan.benchmark_count}, {"n_per_benchmark", plan.n_per_benchmark},
                                    {"n_total", plan.n_total}};
                if (exact) {
                    j["n_per_cluster_exact"] = *exact;
                    j["effect_size"] = d;
                    j["alpha"] = alpha;
                    j["power"] = power;
                    j["tails"] = tails;
                }
                std::cout << j.dump(2) << "\n";
            } else {
                if (exact) std::cout << "n per cluster (exact): " << format_fixed(*exact, 3) << "\n";
                std::cout << "n per cluster:   " << plan.n_per_cluster << "\n"
                          << "n per benchmark: " << plan.n_per_benchmark << "\n"
                          << "n total:         " << plan.n_total << "\n";
            }
            return 0;
        }

        if (flt->parsed()) {
            const auto records = flt_corpus.load();
            OutlierSummary summary;
            const auto part = filter_corpus(records, method == "iqr" ? OutlierMethod::iqr : OutlierMethod::zscore,
                                            scope == "pooled" ? OutlierScope::pooled : OutlierScope::per_corpus,
                                            &summary);
            if (!retained_out.empty()) write_records_jsonl(retained_out, part.retained);
            if (!removed_out.empty()) write_records_jsonl(removed_out, part.removed);
            if (as_json) {
                nlohmann::json b = nlohmann::json::object();
                for (const auto& [id, x] : summary.bounds) b[id] = {{"lower", x.lower}, {"upper", x.upper}};
                std::cout << nlohmann::json{{"method", method}, {"scope", scope}, {"retained", summary.retained},
                                            {"removed", summary.removed}, {"bounds", b}}
                                 .dump(2)
                          << "\n";
            } else {
                std::cout << "retained " << summary.retained << ", removed " << summary.removed << "\n";
                for (const auto& [id, x] : summary.bounds)
                    std::cout << "  " << id << ": [" << format_fixed(x.lower, 2) << ", " << format_fixed(x.upper, 2)
                              << "]\n";
            }
            return 0;
        }

        if (red->parsed()) {
            auto m = read_vector_file(vectors);
            if (!no_normalize) m = l2_normalize(std::move(m));
            const Metric mt = Metric::fit(parse_metric(metric), m.vectors);
            ReducerParams params;
            if (reducer == "umap") params = UmapParams{.n_neighbors = n_neighbors, .min_dist = min_dist, .epochs = epochs, .seed = reduce_seed};
            else params = TsneParams{.perplexity = perplexity, .iterations = iterations, .seed = reduce_seed};
            const auto emb = reduce(m.vectors, m.row_ids, params, mt, threads);
            for (const auto& w : emb.warnings) std::cerr << "warning: " << w << "\n";
            write_text_file(coords_out, coords_csv(emb));
            std::cout << "wrote " << emb.rows() << " coordinates to " << coords_out << " ("
                      << format_fixed(emb.wall_time.count(), 2) << "s)\n";
            return 0;
        }

        if (clu->parsed()) {
            const auto emb = read_coords_csv(coords_in);
            const Metric mt = Metric::fit(parse_metric(metric), emb.coords);
            KMeansOptions ko;
            ko.restarts = restarts;
            KMeansModel model;
            if (k_fixed) {
                model = kmeans_fit(emb.coords, *k_fixed, mt, derive_seed(cluster_seed, "kmeans"), ko);
            } else {
                SelectKOptions so;
                so.k_min = k_min;
                so.k_max = k_max_cluster;
                so.kmeans = ko;
                so.threads = threads;
                auto sel = select_k(emb.coords, mt, derive_seed(cluster_seed, "select-k"), so);
                std::cout << "k by silhouette: " << sel.k_silhouette << ", k by elbow: " << sel.k_elbow
                          << (sel.agree ? " (agree)" : " (disagree)") << "\n";
                if (!diagnostics_out.empty()) {
                    CsvWriter w({"k", "inertia", "silhouette"});
                    for (const auto& dg : sel.diagnostics)
                        w.add({std::to_string(dg.k), format_double(dg.inertia), format_double(dg.silhouette)});
                    w.save(diagnostics_out);
                }
                model = std::move(sel.models.at(sel.k_silhouette - so.k_min));
            }
            const auto sil = silhouette(emb.coords, model.assignments, mt, threads);
            const auto ci = bootstrap_silhouette(emb.coords, model.assignments, mt, bootstrap,
                                                 derive_seed(cluster_seed, "bootstrap"), threads);
            CsvWriter w({"id", "cluster"});
            for (std::size_t i = 0; i < emb.rows(); ++i) w.add({emb.row_ids[i], std::to_string(model.assignments[i])});
            w.save(assignments_out);
            std::cout << "k=" << model.k << "  inertia " << format_double(model.inertia) << "  silhouette "
                      << format_fixed(sil.mean, 4) << " [" << format_fixed(ci.ci_low, 4) << ", "
                      << format_fixed(ci.ci_high, 4) << "]\n";
            return 0;
        }

        if (grd->parsed()) {
            auto cfg = load_run_config(grid_config);
            if (seed) cfg.seed = *seed;
            if (bench_serial) cfg.grid.bench_serial = true;
            if (app.get_option("--threads")->count()) cfg.threads = threads;
            validate_inputs(cfg);
            auto prep = prepare_run(cfg);
            run_config_grid(cfg, prep);
            const auto& g = prep.run.grid;
            std::cout << g.selection_trace;
            if (!grid_out.empty()) {
                fs::create_directories(grid_out);
                write_text_file((fs::path(grid_out) / "grid.csv").string(), grid_csv(g));
                write_text_file((fs::path(grid_out) / "timings.csv").string(), timings_csv(g));
                write_text_file((fs::path(grid_out) / "k_diagnostics.csv").string(), k_diagnostics_csv(g));
                write_text_file((fs::path(grid_out) / "selection.txt").string(), g.selection_trace);
            } else {
                std::cout << "\n" << grid_csv(g);
            }
            bool any_ok = false;
            for (const auto& t : g.trials) any_ok = any_ok || t.ok;
            return any_ok ? 0 : exit_code(ErrorKind::runtime);
        }

        if (lab->parsed()) {
            const auto layout = load_layout(lab_corpus, coords_in, assignments_in);
            const auto taxonomy = load_taxonomy(taxonomy_path);
            const auto sets = extract_exemplars(layout.model, layout.coords.coords, layout.records, per_cluster,
                                                parse_exemplar_rule(rule));
            std::vector<LabelVote> votes;
            if (!labels_file.empty()) {
                votes = labels_from_map(read_label_file(labels_file, taxonomy), layout.model.k);
            } else {
                if (endpoint.empty()) throw ValidationError("give --endpoint or --labels-from-file");
                ServiceConfig sc;
                sc.endpoint = endpoint;
                sc.model_id = model;
                sc.token_env = token_env;
                LabelOptions lo;
                lo.runs = runs;
                lo.threads = threads;
                votes = request_labels(chat_completion_oracle(sc), sets, taxonomy, lo);
            }
            CsvWriter w({"cluster", "label", "agreement", "runs"});
            for (const auto& v : votes) {
                std::string rs;
                for (std::size_t i = 0; i < v.runs.size(); ++i) rs += (i ? "|" : "") + v.runs[i];
                w.add({std::to_string(v.cluster_id), v.final_label, format_double(v.agreement), rs});
                for (const auto& warn : v.warnings) std::cerr << "warning: " << warn << "\n";
            }
            w.save(labels_out);
            if (!exemplars_out.empty()) write_text_file(exemplars_out, exemplars_csv(sets));
            std::cout << w.str();
            return 0;
        }

        if (rep->parsed()) {
            const auto layout = load_layout(rep_corpus, coords_in, assignments_in);
            std::vector<std::string> names(layout.model.k);
            if (!labels_in.empty()) {
                const auto rows = parse_delimited(read_file(labels_in));
                for (std::size_t r = 1; r < rows.size(); ++r) {
                    if (rows[r].size() < 2) continue;
                    const auto c = static_cast<std::size_t>(parse_int(rows[r][0], "cluster"));
                    if (c < names.size()) names[c] = rows[r][1];
                }
            }
            fs::create_directories(report_dir);
            const auto table = frequency_table(layout.model.assignments, layout.model.k, layout.records, names);
            write_text_file((fs::path(report_dir) / "frequency.csv").string(), table.counts_csv());
            write_text_file((fs::path(report_dir) / "frequency_proportions.csv").string(), table.proportions_csv());
            write_text_file((fs::path(report_dir) / "kde_lengths.csv").string(), kde_csv(length_kdes(layout.records)));
            emit_scatter(layout.coords, layout.model.assignments, names, layout.records,
                         (fs::path(report_dir) / "scatter.svg").string(),
                         (fs::path(report_dir) / "scatter.csv").string());
            std::cout << table.counts_csv();
            return 0;
        }
    } catch (const Error& e) {
        return report_failure(e);
    } catch (const std::exception& e) {
        std::cerr << "error (runtime): " << e.what() << "\n";
        return exit_code(ErrorKind::runtime);
    }
    return 0;
}
