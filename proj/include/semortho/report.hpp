#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semortho/core/error.hpp"
#include "semortho/core/text.hpp"
#include "semortho/corpus.hpp"
#include "semortho/label.hpp"
#include "semortho/optimize.hpp"
#include "semortho/stats.hpp"
#include "semortho/version.hpp"

namespace semortho {

// ---------------------------------------------------------------------------
// Frequency table

struct FrequencyTable {
    std::vector<std::string> corpus_ids;      // rows, sorted
    std::vector<std::string> cluster_labels;  // one per column; empty when unlabeled
    std::vector<std::vector<std::size_t>> counts;
    std::vector<std::vector<double>> row_proportions;

    std::size_t clusters() const noexcept { return cluster_labels.size(); }

    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& row : counts)
            for (auto c : row) t += c;
        return t;
    }

    std::string column_name(std::size_t j) const {
        return cluster_labels[j].empty() ? "cluster " + std::to_string(j)
                                         : std::to_string(j) + ": " + cluster_labels[j];
    }

    std::string counts_csv() const {
        std::vector<std::string> header{"corpus"};
        for (std::size_t j = 0; j < clusters(); ++j) header.push_back(column_name(j));
        header.push_back("total");
        CsvWriter w(header);
        for (std::size_t r = 0; r < corpus_ids.size(); ++r) {
            std::vector<std::string> row{corpus_ids[r]};
            std::size_t sum = 0;
            for (auto c : counts[r]) {
                row.push_back(std::to_string(c));
                sum += c;
            }
            row.push_back(std::to_string(sum));
            w.add(row);
        }
        return w.str();
    }

    std::string proportions_csv() const {
        std::vector<std::string> header{"corpus"};
        for (std::size_t j = 0; j < clusters(); ++j) header.push_back(column_name(j));
        CsvWriter w(header);
        for (std::size_t r = 0; r < corpus_ids.size(); ++r) {
            std::vector<std::string> row{corpus_ids[r]};
            for (double p : row_proportions[r]) row.push_back(format_fixed(p, 6));
            w.add(row);
        }
        return w.str();
    }
};

/// counts[c][j] = records of corpus c assigned to cluster j. `labels` may be
/// empty (unlabeled columns) or hold one entry per cluster.
inline FrequencyTable frequency_table(const std::vector<std::size_t>& assignments, std::size_t k,
                                      const std::vector<PromptRecord>& records,
                                      const std::vector<std::string>& labels = {}) {
    if (assignments.size() != records.size())
        throw ValidationError("frequency table: " + std::to_string(assignments.size()) + " assignments for " +
                              std::to_string(records.size()) + " records");
    if (!labels.empty() && labels.size() != k) throw ValidationError("frequency table: label count differs from k");
    FrequencyTable t;
    std::map<std::string, std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (assignments[i] >= k) throw ValidationError("frequency table: assignment out of range");
        auto& row = rows[records[i].corpus_id];
        row.resize(k, 0);
        ++row[assignments[i]];
    }
    t.cluster_labels = labels.empty() ? std::vector<std::string>(k) : labels;
    for (auto& [id, row] : rows) {
        t.corpus_ids.push_back(id);
        const double sum = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
        std::vector<double> prop(k);
        for (std::size_t j = 0; j < k; ++j) prop[j] = static_cast<double>(row[j]) / sum;
        t.counts.push_back(std::move(row));
        t.row_proportions.push_back(std::move(prop));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Kernel density

struct KdeCurve {
    std::string name;  // corpus id or "pooled"
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
    bool auto_bandwidth = true;
};

/// Silverman's rule: 0.9 * min(sd, IQR / 1.34) * n^(-1/5), with the sample sd.
inline double silverman_bandwidth(std::span<const double> values) {
    if (values.size() < 2) throw ValidationError("automatic KDE bandwidth needs at least 2 values");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double sd = stats::stddev(sorted, 1);
    if (sd == 0.0)
        throw ValidationError("all values are equal; automatic bandwidth is undefined, set a bandwidth explicitly");
    const double iqr = stats::quantile_sorted(sorted, 0.75) - stats::quantile_sorted(sorted, 0.25);
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    return 0.9 * spread * std::pow(static_cast<double>(sorted.size()), -0.2);
}

inline double kde_density(std::span<const double> values, double h, double x) {
    const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    double s = 0.0;
    for (double v : values) {
        const double u = (x - v) / h;
        s += std::exp(-0.5 * u * u);
    }
    return s * norm;
}

struct KdeOptions {
    std::optional<double> bandwidth;  // nullopt: Silverman
    std::size_t grid_size = 512;      // minimum; refined so grid spacing stays <= h / 4
    bool clip_at_zero = true;
    std::size_t max_grid_size = 8192;
};

/// Gaussian KDE on a grid spanning [min - 3h, max + 3h], optionally clipped at 0.
inline KdeCurve kde(std::span<const double> values, const KdeOptions& opt = {}, std::string name = "pooled") {
    if (values.empty()) throw ValidationError("KDE needs at least one value");
    if (opt.grid_size < 2) throw ValidationError("KDE grid needs at least 2 points");
    KdeCurve c;
    c.name = std::move(name);
    c.auto_bandwidth = !opt.bandwidth;
    if (opt.bandwidth) {
        if (!(*opt.bandwidth > 0.0) || !std::isfinite(*opt.bandwidth))
            throw ValidationError("KDE bandwidth must be positive");
        c.bandwidth = *opt.bandwidth;
    } else {
        c.bandwidth = silverman_bandwidth(values);
    }
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    double lo = *mn - 3.0 * c.bandwidth;
    const double hi = *mx + 3.0 * c.bandwidth;
    if (opt.clip_at_zero) lo = std::max(lo, 0.0);
    const double span = hi - lo;
    std::size_t g = opt.grid_size;
    if (span > 0.0) {
        const double wanted = std::ceil(span / (c.bandwidth / 4.0)) + 1.0;
        if (wanted > static_cast<double>(g)) g = static_cast<std::size_t>(std::min(wanted, double(opt.max_grid_size)));
        g = std::max(g, opt.grid_size);
    }
    c.grid.resize(g);
    c.density.resize(g);
    for (std::size_t i = 0; i < g; ++i) {
        c.grid[i] = lo + span * static_cast<double>(i) / static_cast<double>(g - 1);
        c.density[i] = kde_density(values, c.bandwidth, c.grid[i]);
    }
    return c;
}

inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    return s;
}

/// Pooled curve first, then one per corpus.
inline std::vector<KdeCurve> length_kdes(const std::vector<PromptRecord>& records, const KdeOptions& opt = {}) {
    std::vector<KdeCurve> out;
    out.push_back(kde(lengths_of(records), opt, "pooled"));
    std::map<std::string, std::vector<double>> by_corpus;
    for (const auto& r : records) by_corpus[r.corpus_id].push_back(static_cast<double>(r.char_length));
    for (const auto& [id, v] : by_corpus) out.push_back(kde(v, opt, id));
    return out;
}

inline std::string kde_csv(const std::vector<KdeCurve>& curves) {
    CsvWriter w({"curve", "bandwidth", "x", "density"});
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.grid.size(); ++i)
            w.add({c.name, format_double(c.bandwidth), format_double(c.grid[i]), format_double(c.density[i])});
    return w.str();
}

// ---------------------------------------------------------------------------
// Scatter plot

inline std::string xml_escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += ch;
        }
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::runtime, "cannot write " + path);
    f << content;
    if (!f) throw Error(ErrorKind::runtime, "failed writing " + path);
}

struct ScatterFiles {
    std::string svg;
    std::string table;
};

/// SVG of the 2D layout, points colored by corpus, one text anchor per labeled
/// cluster at the mean position of its members. Also renders the sidecar table
/// id,x,y,cluster,label,corpus.
inline ScatterFiles render_scatter(const Embedding2D& emb, const std::vector<std::size_t>& assignments,
                                   const std::vector<std::string>& labels, const std::vector<PromptRecord>& records) {
    const std::size_t n = emb.rows();
    if (assignments.size() != n || records.size() != n)
        throw ValidationError("scatter: coordinates, assignments and records are not aligned");
    static constexpr const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    const auto corpora = corpus_ids(records);
    std::vector<std::string> sorted_corpora = corpora;
    std::sort(sorted_corpora.begin(), sorted_corpora.end());
    std::map<std::string, std::string> color;
    for (std::size_t i = 0; i < sorted_corpora.size(); ++i) color[sorted_corpora[i]] = palette[i % std::size(palette)];

    constexpr double width = 900, height = 700, margin = 40, legend = 180;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (n > 0) {
        x0 = x1 = emb.coords(0, 0);
        y0 = y1 = emb.coords(0, 1);
        for (std::size_t i = 0; i < n; ++i) {
            x0 = std::min(x0, emb.coords(i, 0));
            x1 = std::max(x1, emb.coords(i, 0));
            y0 = std::min(y0, emb.coords(i, 1));
            y1 = std::max(y1, emb.coords(i, 1));
        }
    }
    const double sx = (width - legend - 2 * margin) / std::max(x1 - x0, 1e-12);
    const double sy = (height - 2 * margin) / std::max(y1 - y0, 1e-12);
    auto px = [&](double x) { return format_fixed(margin + (x - x0) * sx, 2); };
    auto py = [&](double y) { return format_fixed(height - margin - (y - y0) * sy, 2); };

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g id=\"points\">\n";
    for (std::size_t i = 0; i < n; ++i)
        svg << "<circle cx=\"" << px(emb.coords(i, 0)) << "\" cy=\"" << py(emb.coords(i, 1))
            << "\" r=\"2\" fill=\"" << color[records[i].corpus_id] << "\" fill-opacity=\"0.6\"/>\n";
    svg << "</g>\n";

    std::size_t k = 0;
    for (auto a : assignments) k = std::max(k, a + 1);
    if (!labels.empty()) {
        svg << "<g id=\"labels\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">\n";
        for (std::size_t c = 0; c < k; ++c) {
            if (c >= labels.size() || labels[c].empty()) continue;
            double mx = 0, my = 0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (assignments[i] == c) {
                    mx += emb.coords(i, 0);
                    my += emb.coords(i, 1);
                    ++cnt;
                }
            if (cnt == 0) continue;
            mx /= static_cast<double>(cnt);
            my /= static_cast<double>(cnt);
            svg << "<text class=\"cluster-label\" data-cluster=\"" << c << "\" x=\"" << px(mx) << "\" y=\""
                << py(my) << "\" stroke=\"white\" stroke-width=\"3\" paint-order=\"stroke\">"
                << xml_escape(std::to_string(c) + ": " + labels[c]) << "</text>\n";
        }
        svg << "</g>\n";
    }
    svg << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
    for (std::size_t i = 0; i < sorted_corpora.size(); ++i) {
        const double ly = margin + 20.0 * static_cast<double>(i);
        svg << "<circle cx=\"" << format_fixed(width - legend + 10, 2) << "\" cy=\"" << format_fixed(ly, 2)
            << "\" r=\"5\" fill=\"" << color[sorted_corpora[i]] << "\"/>\n"
            << "<text x=\"" << format_fixed(width - legend + 22, 2) << "\" y=\"" << format_fixed(ly + 4, 2)
            << "\">" << xml_escape(sorted_corpora[i]) << "</text>\n";
    }
    svg << "</g>\n</svg>\n";

    CsvWriter w({"id", "x", "y", "cluster", "label", "corpus"});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = assignments[i];
        w.add({emb.row_ids[i], format_double(emb.coords(i, 0)), format_double(emb.coords(i, 1)), std::to_string(c),
               c < labels.size() ? labels[c] : std::string{}, records[i].corpus_id});
    }
    return {svg.str(), w.str()};
}

inline void emit_scatter(const Embedding2D& emb, const std::vector<std::size_t>& assignments,
                         const std::vector<std::string>& labels, const std::vector<PromptRecord>& records,
                         const std::string& svg_path, const std::string& table_path) {
    const auto files = render_scatter(emb, assignments, labels, records);
    write_text_file(svg_path, files.svg);
    write_text_file(table_path, files.table);
}

// ---------------------------------------------------------------------------
// Run report

inline constexpr int kReportSchemaVersion = 1;

struct RunReport {
    std::uint64_t master_seed = 0;
    std::map<std::string, std::uint64_t> stage_seeds;
    std::map<std::string, std::string> inputs;  // config path, corpus files, vector files
    std::size_t loaded = 0;
    CorpusStats stats_loaded;
    OutlierSummary outliers;
    CorpusStats stats_filtered;
    std::vector<KdeCurve> kde_filtered;
    std::vector<KdeCurve> kde_loaded;  // optional pre-filter curves
    PowerParams power;
    bool n_from_power = true;
    SamplePlan plan;
    std::vector<Shortfall> shortfalls;
    std::vector<PromptRecord> sample;
    std::map<std::string, std::size_t> embedding_dims;
    GridReport grid;
    std::vector<ExemplarSet> exemplars;
    std::vector<LabelVote> labels;
    std::string label_source;  // "service", "file" or "none"
    std::string label_error;
    FrequencyTable frequency;
    std::vector<std::string> warnings;
};

inline std::string iso_utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline nlohmann::json to_json(const LengthSummary& s) {
    return {{"count", s.count}, {"mean", s.mean}, {"median", s.median},
            {"q1", s.q1},       {"q3", s.q3},     {"sigma", s.sigma}};
}

inline nlohmann::json to_json(const CorpusStats& st) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, s] : st.per_corpus) per[id] = to_json(s);
    return {{"pooled", to_json(st.pooled)}, {"per_corpus", per}};
}

inline std::string length_stats_csv(const RunReport& run) {
    CsvWriter w({"stage", "corpus", "count", "mean", "median", "q1", "q3", "sigma"});
    auto emit = [&](const std::string& stage, const CorpusStats& st) {
        auto row = [&](const std::string& id, const LengthSummary& s) {
            w.add({stage, id, std::to_string(s.count), format_double(s.mean), format_double(s.median),
                   format_double(s.q1), format_double(s.q3), format_double(s.sigma)});
        };
        row("pooled", st.pooled);
        for (const auto& [id, s] : st.per_corpus) row(id, s);
    };
    emit("loaded", run.stats_loaded);
    emit("filtered", run.stats_filtered);
    return w.str();
}

/// Deterministic per-trial table (no timings).
inline std::string grid_csv(const GridReport& g) {
    CsvWriter w({"index", "config", "model", "metric", "reducer", "status", "k", "silhouette", "ci_low", "ci_high",
                 "candidate", "winner", "error"});
    for (std::size_t i = 0; i < g.trials.size(); ++i) {
        const auto& t = g.trials[i];
        const bool cand = std::find(g.candidates.begin(), g.candidates.end(), i) != g.candidates.end();
        w.add({std::to_string(i), t.config.id(), t.config.embedding_model_id, to_string(t.config.metric),
               t.config.reducer_label(), t.ok ? "ok" : "failed", t.ok ? std::to_string(t.k_used) : "",
               t.ok ? format_double(t.silhouette_mean) : "", t.ok ? format_double(t.ci_low) : "",
               t.ok ? format_double(t.ci_high) : "", cand ? "1" : "0",
               (t.ok && i == g.winner) ? "1" : "0", t.error});
    }
    return w.str();
}

inline std::string timings_csv(const GridReport& g) {
    CsvWriter w({"config", "silhouette", "ci_low", "ci_high", "wall_time_s", "reducer_time_s", "cluster_time_s"});
    for (const auto& t : g.trials) {
        if (!t.ok) continue;
        w.add({t.config.id(), format_double(t.silhouette_mean), format_double(t.ci_low), format_double(t.ci_high),
               format_fixed(t.wall_time.count(), 6), format_fixed(t.reducer_time.count(), 6),
               format_fixed(t.cluster_time.count(), 6)});
    }
    return w.str();
}

inline std::string k_diagnostics_csv(const GridReport& g) {
    CsvWriter w({"config", "k", "inertia", "silhouette", "k_silhouette", "k_elbow"});
    for (const auto& t : g.trials) {
        if (!t.ok) continue;
        for (const auto& d : t.diagnostics)
            w.add({t.config.id(), std::to_string(d.k), format_double(d.inertia), format_double(d.silhouette),
                   t.k_silhouette ? std::to_string(*t.k_silhouette) : "", t.k_elbow ? std::to_string(*t.k_elbow) : ""});
    }
    return w.str();
}

inline std::string labels_csv(const RunReport& run, const std::vector<std::size_t>& sizes) {
    CsvWriter w({"cluster", "label", "agreement", "runs", "size", "status"});
    for (const auto& v : run.labels) {
        std::string runs;
        for (std::size_t i = 0; i < v.runs.size(); ++i) runs += (i ? "|" : "") + v.runs[i];
        w.add({std::to_string(v.cluster_id), v.final_label, format_double(v.agreement), runs,
               v.cluster_id < sizes.size() ? std::to_string(sizes[v.cluster_id]) : "",
               v.final_label.empty() ? "unlabeled" : "labeled"});
    }
    return w.str();
}

inline std::string exemplars_csv(const std::vector<ExemplarSet>& sets) {
    CsvWriter w({"cluster", "rank", "rule", "id", "distance", "text"});
    for (const auto& s : sets)
        for (std::size_t i = 0; i < s.exemplar_ids.size(); ++i)
            w.add({std::to_string(s.cluster_id), std::to_string(i + 1), to_string(s.rule), s.exemplar_ids[i],
                   format_double(s.distances[i]), s.texts[i]});
    return w.str();
}

inline std::string sample_csv(const std::vector<PromptRecord>& sample) {
    CsvWriter w({"id", "corpus", "char_length"});
    for (const auto& r : sample) w.add({r.id, r.corpus_id, std::to_string(r.char_length)});
    return w.str();
}

/// Writes report.json plus the tables and plots into `dir` and returns the
/// artifact map (name -> path) recorded in the report.
inline std::map<std::string, std::string> write_report(const RunReport& run, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::runtime, "cannot create output directory " + dir + ": " + ec.message());

    std::map<std::string, std::string> files;
    auto put = [&](const std::string& name, const std::string& file, const std::string& content) {
        const std::string path = (fs::path(dir) / file).string();
        write_text_file(path, content);
        files[name] = path;
    };

    const auto& g = run.grid;
    const bool have_winner = !g.trials.empty() && g.trials[g.winner].ok;
    std::vector<std::string> label_names;
    for (const auto& v : run.labels) label_names.push_back(v.final_label);

    put("length_stats", "length_stats.csv", length_stats_csv(run));
    put("sample", "sample.csv", sample_csv(run.sample));
    put("grid", "grid.csv", grid_csv(g));
    put("timings", "timings.csv", timings_csv(g));
    put("k_diagnostics", "k_diagnostics.csv", k_diagnostics_csv(g));
    put("selection", "selection.txt", g.selection_trace);
    if (!run.kde_filtered.empty()) put("kde", "kde_lengths.csv", kde_csv(run.kde_filtered));
    if (!run.kde_loaded.empty()) put("kde_prefilter", "kde_lengths_prefilter.csv", kde_csv(run.kde_loaded));

    std::vector<std::size_t> sizes;
    if (have_winner) {
        const auto& w = g.trials[g.winner];
        sizes.assign(w.model.k, 0);
        for (auto a : w.model.assignments) ++sizes[a];
        put("coords", "coords.csv", coords_csv(w.embedding));
        put("frequency", "frequency.csv", run.frequency.counts_csv());
        put("frequency_proportions", "frequency_proportions.csv", run.frequency.proportions_csv());
        put("exemplars", "exemplars.csv", exemplars_csv(run.exemplars));
        put("labels", "labels.csv", labels_csv(run, sizes));
        const auto scatter = render_scatter(w.embedding, w.model.assignments, label_names, run.sample);
        put("scatter_svg", "scatter.svg", scatter.svg);
        put("scatter_table", "scatter.csv", scatter.table);
    }

    using nlohmann::json;
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["tool_version"] = kVersion;
    j["generated_at"] = iso_utc_now();
    j["seeds"] = {{"master", run.master_seed}, {"stages", run.stage_seeds}};
    j["inputs"] = run.inputs;
    j["corpus"] = {{"loaded", run.loaded}, {"stats_loaded", to_json(run.stats_loaded)},
                   {"stats_filtered", to_json(run.stats_filtered)}};
    json bounds = json::object();
    for (const auto& [id, b] : run.outliers.bounds)
        bounds[id] = {{"lower", b.lower}, {"upper", b.upper}, {"q1", b.q1}, {"q3", b.q3},
                      {"mu", b.mu},       {"sigma", b.sigma}};
    j["outliers"] = {{"method", run.outliers.method == OutlierMethod::iqr ? "iqr" : "zscore"},
                     {"scope", run.outliers.scope == OutlierScope::pooled ? "pooled" : "per_corpus"},
                     {"retained", run.outliers.retained},
                     {"removed", run.outliers.removed},
                     {"bounds", bounds}};
    json shortfalls = json::array();
    for (const auto& s : run.shortfalls)
        shortfalls.push_back({{"corpus", s.corpus_id}, {"requested", s.requested}, {"available", s.available}});
    j["sample_plan"] = {{"n_per_cluster", run.plan.n_per_cluster},
                        {"n_per_cluster_source", run.n_from_power ? "power_analysis" : "configured"},
                        {"effect_size", run.power.effect_size},
                        {"alpha", run.power.alpha},
                        {"power", run.power.power},
                        {"tails", run.power.tails == Tails::two ? "two" : "one"},
                        {"k_max", run.plan.k_max},
                        {"coverage_multiplier", run.plan.coverage_multiplier},
                        {"benchmark_count", run.plan.benchmark_count},
                        {"n_per_benchmark", run.plan.n_per_benchmark},
                        {"n_total", run.plan.n_total},
                        {"sampled", run.sample.size()},
                        {"shortfalls", shortfalls}};
    j["embeddings"] = run.embedding_dims;

    json trials = json::array(), failures = json::array();
    for (std::size_t i = 0; i < g.trials.size(); ++i) {
        const auto& t = g.trials[i];
        json tj = {{"index", i},
                   {"config", t.config.id()},
                   {"model", t.config.embedding_model_id},
                   {"metric", to_string(t.config.metric)},
                   {"reducer", t.config.reducer_label()},
                   {"status", t.ok ? "ok" : "failed"}};
        if (t.ok) {
            tj["k"] = t.k_used;
            tj["silhouette"] = t.silhouette_mean;
            tj["ci"] = {t.ci_low, t.ci_high};
            tj["wall_time_s"] = t.wall_time.count();
            tj["reducer_time_s"] = t.reducer_time.count();
            tj["cluster_time_s"] = t.cluster_time.count();
            tj["reducer_params"] = t.embedding.params;
            tj["reducer_diagnostics"] = t.embedding.diagnostics;
            if (!t.embedding.warnings.empty()) tj["warnings"] = t.embedding.warnings;
            if (t.k_silhouette) tj["k_silhouette"] = *t.k_silhouette;
            if (t.k_elbow) tj["k_elbow"] = *t.k_elbow;
        } else {
            tj["error"] = t.error;
            failures.push_back({{"config", t.config.id()}, {"error", t.error}});
        }
        trials.push_back(std::move(tj));
    }
    j["grid"] = {{"trials", trials}, {"failures", failures}, {"candidates", g.candidates},
                 {"selection_trace", g.selection_trace}};
    if (have_winner) {
        const auto& w = g.trials[g.winner];
        j["grid"]["winner"] = g.winner;
        j["chosen_config"] = {{"config", w.config.id()},
                              {"k", w.k_used},
                              {"silhouette", w.silhouette_mean},
                              {"ci", {w.ci_low, w.ci_high}},
                              {"k_mode", w.config.fixed_k ? "fixed" : "auto"}};
    }
    json labels = json::array();
    bool complete = !run.labels.empty();
    for (const auto& v : run.labels) {
        labels.push_back({{"cluster", v.cluster_id},
                          {"label", v.final_label.empty() ? json(nullptr) : json(v.final_label)},
                          {"agreement", v.agreement},
                          {"runs", v.runs},
                          {"size", v.cluster_id < sizes.size() ? sizes[v.cluster_id] : 0},
                          {"warnings", v.warnings}});
        complete = complete && !v.final_label.empty();
    }
    j["labels"] = {{"source", run.label_source}, {"complete", complete}, {"clusters", labels}};
    if (!run.label_error.empty()) j["labels"]["error"] = run.label_error;
    j["warnings"] = run.warnings;
    files["report"] = (fs::path(dir) / "report.json").string();
    j["artifacts"] = files;
    write_text_file(files["report"], j.dump(2) + "\n");
    return files;
}

}  // namespace semortho
