#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semortho/core/error.hpp"
#include "semortho/core/text.hpp"
#include "semortho/corpus.hpp"
#include "semortho/embed.hpp"
#include "semortho/geometry.hpp"
#include "semortho/label.hpp"
#include "semortho/optimize.hpp"
#include "semortho/reduce.hpp"

#ifndef SEMORTHO_DATA_DIR
#define SEMORTHO_DATA_DIR "data"
#endif

namespace semortho {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
    std::string path;  // the config file itself; relative paths resolve against its directory
    std::uint64_t seed = 42;
    unsigned threads = 1;
    std::string output_dir = "semortho-out";

    std::vector<CorpusSource> sources;
    CorpusSchema schema;

    OutlierMethod outlier_method = OutlierMethod::zscore;
    OutlierScope outlier_scope = OutlierScope::pooled;
    bool kde_prefilter = false;

    std::optional<std::size_t> n_per_cluster;  // nullopt: from the power analysis
    PowerParams power;
    std::size_t sample_k_max = 15;
    double coverage_multiplier = 1.0;
    std::optional<std::size_t> benchmark_count;  // nullopt: number of corpora

    std::map<std::string, std::string> vector_files;  // model id -> path
    std::optional<EmbeddingClientConfig> embedding_service;
    std::vector<std::string> embedding_models;        // models fetched from the service
    bool normalize = true;

    std::vector<std::string> grid_models;  // empty: every embedding model
    std::vector<MetricKind> metrics{MetricKind::euclidean, MetricKind::mahalanobis};
    std::vector<ReducerParams> reducers;
    std::optional<std::size_t> fixed_k;
    GridOptions grid;

    std::string label_source = "none";  // none | file | service
    std::string label_file;
    std::string taxonomy_file;
    std::size_t exemplars_per_cluster = 4;
    ExemplarRule exemplar_rule = ExemplarRule::nearest_centroid;
    LabelOptions label;
    ServiceConfig label_service;
};

namespace config_detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ValidationError(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items())
        if (!ok.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where, T fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(where + "." + key + ": wrong type");
    }
}

inline std::string resolve(const std::string& base, const std::string& p) {
    namespace fs = std::filesystem;
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base) / p).lexically_normal().string();
}

inline ServiceConfig parse_service(const json& s, const std::string& where) {
    check_keys(s, where, {"endpoint", "model", "token_env", "timeout_ms", "retries", "backoff_ms", "batch_size",
                          "parallelism", "models"});
    ServiceConfig c;
    c.endpoint = get<std::string>(s, "endpoint", where, "");
    if (c.endpoint.empty()) throw ValidationError(where + ".endpoint is required");
    parse_url(c.endpoint);
    c.model_id = get<std::string>(s, "model", where, "");
    c.token_env = get<std::string>(s, "token_env", where, "");
    const long long timeout = get<long long>(s, "timeout_ms", where, 30000);
    const long long backoff = get<long long>(s, "backoff_ms", where, 250);
    c.retries = get<int>(s, "retries", where, 3);
    if (timeout <= 0 || backoff < 0 || c.retries < 0) throw ValidationError(where + ": timeouts and retries must be positive");
    c.timeout = std::chrono::milliseconds(timeout);
    c.backoff = std::chrono::milliseconds(backoff);
    return c;
}

// Sample size is unknown at parse time; checks that depend on n run per trial.
inline constexpr std::size_t kUnknownN = std::numeric_limits<std::size_t>::max();

inline ReducerParams parse_reducer(const json& r, const std::string& where) {
    const auto type = get<std::string>(r, "type", where, "");
    if (type == "umap") {
        check_keys(r, where, {"type", "n_neighbors", "min_dist", "spread", "epochs", "negative_sample_rate",
                              "learning_rate"});
        UmapParams p;
        p.n_neighbors = get<std::size_t>(r, "n_neighbors", where, p.n_neighbors);
        p.min_dist = get<double>(r, "min_dist", where, p.min_dist);
        p.spread = get<double>(r, "spread", where, p.spread);
        p.epochs = get<std::size_t>(r, "epochs", where, p.epochs);
        p.negative_sample_rate = get<std::size_t>(r, "negative_sample_rate", where, p.negative_sample_rate);
        p.learning_rate = get<double>(r, "learning_rate", where, p.learning_rate);
        p.validate(kUnknownN);
        return p;
    }
    if (type == "tsne") {
        check_keys(r, where, {"type", "perplexity", "learning_rate", "iterations", "early_exaggeration",
                              "early_exaggeration_iters"});
        TsneParams p;
        p.perplexity = get<double>(r, "perplexity", where, p.perplexity);
        p.learning_rate = get<double>(r, "learning_rate", where, p.learning_rate);
        p.iterations = get<std::size_t>(r, "iterations", where, p.iterations);
        p.early_exaggeration = get<double>(r, "early_exaggeration", where, p.early_exaggeration);
        p.early_exaggeration_iters = get<std::size_t>(r, "early_exaggeration_iters", where, p.early_exaggeration_iters);
        p.validate(kUnknownN);
        return p;
    }
    throw ValidationError(where + ".type must be 'umap' or 'tsne'");
}

}  // namespace config_detail

/// Parses the JSON run configuration (comments allowed). Unknown keys are
/// rejected. Paths are resolved against `base_dir`.
inline RunConfig parse_run_config(const std::string& text, const std::string& base_dir, std::string path = {}) {
    using namespace config_detail;
    json j;
    try {
        j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    check_keys(j, "config", {"schema_version", "seed", "threads", "output_dir", "corpus", "outliers", "sample",
                             "embeddings", "grid", "labels"});
    const int version = get<int>(j, "schema_version", "config", kConfigSchemaVersion);
    if (version != kConfigSchemaVersion)
        throw ValidationError("config schema_version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kConfigSchemaVersion) + ")");
    RunConfig c;
    c.path = path;
    c.seed = get<std::uint64_t>(j, "seed", "config", c.seed);
    c.threads = get<unsigned>(j, "threads", "config", c.threads);
    c.output_dir = resolve(base_dir, get<std::string>(j, "output_dir", "config", c.output_dir));

    // corpus
    if (!j.contains("corpus")) throw ValidationError("config: 'corpus' section is required");
    const auto& cj = j.at("corpus");
    check_keys(cj, "corpus", {"sources", "format", "id_field", "corpus_field", "text_field", "delimiter", "has_header"});
    const auto fmt = get<std::string>(cj, "format", "corpus", "jsonl");
    if (fmt == "jsonl") c.schema.format = CorpusFormat::jsonl;
    else if (fmt == "delimited") c.schema.format = CorpusFormat::delimited;
    else throw ValidationError("corpus.format must be 'jsonl' or 'delimited'");
    c.schema.id_field = get<std::string>(cj, "id_field", "corpus", c.schema.id_field);
    c.schema.corpus_field = get<std::string>(cj, "corpus_field", "corpus", c.schema.corpus_field);
    c.schema.text_field = get<std::string>(cj, "text_field", "corpus", c.schema.text_field);
    const auto delim = get<std::string>(cj, "delimiter", "corpus", ",");
    if (delim.size() != 1) throw ValidationError("corpus.delimiter must be a single character");
    c.schema.delimiter = delim[0];
    c.schema.has_header = get<bool>(cj, "has_header", "corpus", false);
    if (!cj.contains("sources") || !cj.at("sources").is_array() || cj.at("sources").empty())
        throw ValidationError("corpus.sources must be a non-empty list");
    for (std::size_t i = 0; i < cj.at("sources").size(); ++i) {
        const auto& s = cj.at("sources")[i];
        const std::string where = "corpus.sources[" + std::to_string(i) + "]";
        check_keys(s, where, {"corpus_id", "path"});
        CorpusSource src{get<std::string>(s, "corpus_id", where, ""), resolve(base_dir, get<std::string>(s, "path", where, ""))};
        if (src.path.empty()) throw ValidationError(where + ".path is required");
        c.sources.push_back(std::move(src));
    }

    // outliers
    if (j.contains("outliers")) {
        const auto& o = j.at("outliers");
        check_keys(o, "outliers", {"method", "scope", "kde_prefilter"});
        const auto m = get<std::string>(o, "method", "outliers", "zscore");
        if (m == "zscore") c.outlier_method = OutlierMethod::zscore;
        else if (m == "iqr") c.outlier_method = OutlierMethod::iqr;
        else throw ValidationError("outliers.method must be 'zscore' or 'iqr'");
        const auto sc = get<std::string>(o, "scope", "outliers", "pooled");
        if (sc == "pooled") c.outlier_scope = OutlierScope::pooled;
        else if (sc == "per_corpus") c.outlier_scope = OutlierScope::per_corpus;
        else throw ValidationError("outliers.scope must be 'pooled' or 'per_corpus'");
        c.kde_prefilter = get<bool>(o, "kde_prefilter", "outliers", false);
    }

    // sample
    if (j.contains("sample")) {
        const auto& s = j.at("sample");
        check_keys(s, "sample", {"n_per_cluster", "effect_size", "alpha", "power", "tails", "k_max",
                                 "coverage_multiplier", "benchmark_count"});
        if (s.contains("n_per_cluster") && !s.at("n_per_cluster").is_null())
            c.n_per_cluster = get<std::size_t>(s, "n_per_cluster", "sample", 0);
        c.power.effect_size = get<double>(s, "effect_size", "sample", c.power.effect_size);
        c.power.alpha = get<double>(s, "alpha", "sample", c.power.alpha);
        c.power.power = get<double>(s, "power", "sample", c.power.power);
        const auto tails = get<std::string>(s, "tails", "sample", "two");
        if (tails == "two") c.power.tails = Tails::two;
        else if (tails == "one") c.power.tails = Tails::one;
        else throw ValidationError("sample.tails must be 'one' or 'two'");
        c.sample_k_max = get<std::size_t>(s, "k_max", "sample", c.sample_k_max);
        c.coverage_multiplier = get<double>(s, "coverage_multiplier", "sample", c.coverage_multiplier);
        if (s.contains("benchmark_count") && !s.at("benchmark_count").is_null())
            c.benchmark_count = get<std::size_t>(s, "benchmark_count", "sample", 0);
    }
    c.power.validate();
    if (c.n_per_cluster && *c.n_per_cluster == 0) throw ValidationError("sample.n_per_cluster must be >= 1");

    // embeddings
    if (!j.contains("embeddings")) throw ValidationError("config: 'embeddings' section is required");
    const auto& e = j.at("embeddings");
    check_keys(e, "embeddings", {"files", "service", "normalize"});
    c.normalize = get<bool>(e, "normalize", "embeddings", true);
    if (e.contains("files")) {
        if (!e.at("files").is_object()) throw ValidationError("embeddings.files must map model id to path");
        for (const auto& [model, p] : e.at("files").items()) {
            if (!p.is_string()) throw ValidationError("embeddings.files." + model + " must be a path");
            c.vector_files[model] = resolve(base_dir, p.get<std::string>());
        }
    }
    if (e.contains("service")) {
        const auto& s = e.at("service");
        EmbeddingClientConfig ec;
        ec.service = parse_service(s, "embeddings.service");
        ec.batch_size = get<std::size_t>(s, "batch_size", "embeddings.service", ec.batch_size);
        ec.parallelism = get<unsigned>(s, "parallelism", "embeddings.service", ec.parallelism);
        if (ec.batch_size < 1) throw ValidationError("embeddings.service.batch_size must be >= 1");
        c.embedding_models = get<std::vector<std::string>>(s, "models", "embeddings.service", {});
        if (c.embedding_models.empty() && !ec.service.model_id.empty()) c.embedding_models = {ec.service.model_id};
        if (c.embedding_models.empty()) throw ValidationError("embeddings.service needs 'model' or 'models'");
        c.embedding_service = ec;
    }
    if (c.vector_files.empty() && !c.embedding_service)
        throw ValidationError("embeddings: provide 'files' or 'service'");
    for (const auto& m : c.embedding_models)
        if (c.vector_files.count(m)) throw ValidationError("embeddings: model '" + m + "' has both a file and the service");

    // grid
    c.grid.threads = c.threads;
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        check_keys(g, "grid", {"models", "metrics", "reducers", "k", "k_min", "k_max", "kmeans_restarts",
                               "bootstrap_samples", "time_tolerance", "bench_serial"});
        c.grid_models = get<std::vector<std::string>>(g, "models", "grid", {});
        if (g.contains("metrics")) {
            c.metrics.clear();
            for (const auto& m : get<std::vector<std::string>>(g, "metrics", "grid", {})) c.metrics.push_back(parse_metric(m));
        }
        if (g.contains("reducers")) {
            if (!g.at("reducers").is_array()) throw ValidationError("grid.reducers must be a list");
            for (std::size_t i = 0; i < g.at("reducers").size(); ++i)
                c.reducers.push_back(parse_reducer(g.at("reducers")[i], "grid.reducers[" + std::to_string(i) + "]"));
        }
        if (g.contains("k")) {
            const auto& k = g.at("k");
            if (k.is_string() && k.get<std::string>() == "auto") c.fixed_k.reset();
            else if (k.is_number_unsigned() && k.get<std::size_t>() >= 2) c.fixed_k = k.get<std::size_t>();
            else throw ValidationError("grid.k must be \"auto\" or an integer >= 2");
        }
        c.grid.select.k_min = get<std::size_t>(g, "k_min", "grid", c.grid.select.k_min);
        c.grid.select.k_max = get<std::size_t>(g, "k_max", "grid", c.grid.select.k_max);
        c.grid.select.kmeans.restarts = get<std::size_t>(g, "kmeans_restarts", "grid", c.grid.select.kmeans.restarts);
        c.grid.bootstrap_samples = get<std::size_t>(g, "bootstrap_samples", "grid", c.grid.bootstrap_samples);
        c.grid.time_tolerance = get<double>(g, "time_tolerance", "grid", c.grid.time_tolerance);
        c.grid.bench_serial = get<bool>(g, "bench_serial", "grid", false);
    }
    if (c.reducers.empty())
        c.reducers = {UmapParams{.n_neighbors = 15}, UmapParams{.n_neighbors = 30}, TsneParams{.perplexity = 30},
                      TsneParams{.perplexity = 50}};
    if (c.metrics.empty()) throw ValidationError("grid.metrics is empty");
    if (c.grid.select.k_min < 2 || c.grid.select.k_max < c.grid.select.k_min + 2)
        throw ValidationError("grid: need 2 <= k_min and k_max >= k_min + 2");
    if (c.grid.bootstrap_samples < 100) throw ValidationError("grid.bootstrap_samples must be >= 100");
    if (c.grid.time_tolerance < 0.0) throw ValidationError("grid.time_tolerance must be >= 0");
    if (c.grid.select.kmeans.restarts < 1) throw ValidationError("grid.kmeans_restarts must be >= 1");

    // labels
    c.taxonomy_file = std::string(SEMORTHO_DATA_DIR) + "/taxonomy.txt";
    if (j.contains("labels")) {
        const auto& l = j.at("labels");
        check_keys(l, "labels", {"source", "file", "taxonomy", "exemplars", "rule", "runs", "max_tiebreak_calls",
                                 "service"});
        c.label_source = get<std::string>(l, "source", "labels", "none");
        c.label_file = resolve(base_dir, get<std::string>(l, "file", "labels", ""));
        if (l.contains("taxonomy")) c.taxonomy_file = resolve(base_dir, get<std::string>(l, "taxonomy", "labels", ""));
        c.exemplars_per_cluster = get<std::size_t>(l, "exemplars", "labels", c.exemplars_per_cluster);
        c.exemplar_rule = parse_exemplar_rule(get<std::string>(l, "rule", "labels", "nearest_centroid"));
        c.label.runs = get<std::size_t>(l, "runs", "labels", c.label.runs);
        c.label.max_tiebreak_calls = get<std::size_t>(l, "max_tiebreak_calls", "labels", c.label.max_tiebreak_calls);
        if (l.contains("service")) c.label_service = parse_service(l.at("service"), "labels.service");
    }
    if (c.label_source != "none" && c.label_source != "file" && c.label_source != "service")
        throw ValidationError("labels.source must be 'none', 'file' or 'service'");
    if (c.label.runs < 1) throw ValidationError("labels.runs must be >= 1");
    if (c.exemplars_per_cluster < 1) throw ValidationError("labels.exemplars must be >= 1");
    if (c.label_source == "file" && c.label_file.empty()) throw ValidationError("labels.file is required for source 'file'");
    if (c.label_source == "service" && c.label_service.endpoint.empty())
        throw ValidationError("labels.service is required for source 'service'");
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    const std::string text = read_file(path);
    const auto base = std::filesystem::path(path).parent_path().string();
    return parse_run_config(text, base.empty() ? "." : base, path);
}

/// Checks that every input file exists and that grid models have embeddings.
/// Runs before any output is written.
inline void validate_inputs(const RunConfig& c) {
    namespace fs = std::filesystem;
    auto need = [](const std::string& p, const std::string& what) {
        if (!fs::is_regular_file(p)) throw ValidationError(what + " not found: " + p);
    };
    for (const auto& s : c.sources) need(s.path, "corpus file");
    for (const auto& [m, p] : c.vector_files) need(p, "vector file for '" + m + "'");
    if (c.label_source == "file") need(c.label_file, "label file");
    if (c.label_source != "none") need(c.taxonomy_file, "taxonomy file");
    for (const auto& m : c.grid_models)
        if (!c.vector_files.count(m) &&
            std::find(c.embedding_models.begin(), c.embedding_models.end(), m) == c.embedding_models.end())
            throw ValidationError("grid.models lists '" + m + "' but no embeddings are configured for it");
    for (const auto& r : c.reducers)
        std::visit([](const auto& p) { p.validate(std::numeric_limits<std::size_t>::max() / 4); }, r);
}

}  // namespace semortho
