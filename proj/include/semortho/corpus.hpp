#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "semortho/core/error.hpp"
#include "semortho/core/random.hpp"
#include "semortho/core/text.hpp"
#include "semortho/stats.hpp"

namespace semortho {

struct PromptRecord {
    std::string id;
    std::string corpus_id;
    std::string text;
    std::size_t char_length = 0;

    friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

inline PromptRecord make_record(std::string id, std::string corpus_id, std::string text) {
    PromptRecord r{std::move(id), std::move(corpus_id), std::move(text), 0};
    r.char_length = utf8_length(r.text);
    return r;
}

// ---------------------------------------------------------------------------
// Loading

struct CorpusSource {
    std::string corpus_id;  // may be empty when rows carry their own tag
    std::string path;
};

enum class CorpusFormat { jsonl, delimited };

/// Field mapping for corpus files. JSONL rows are objects keyed by the three
/// field names; delimited files are either (corpus_id, text) or (text) rows.
struct CorpusSchema {
    CorpusFormat format = CorpusFormat::jsonl;
    std::string id_field = "id";
    std::string corpus_field = "corpus_id";
    std::string text_field = "text";
    char delimiter = ',';
    bool has_header = false;
};

namespace detail {

inline std::string load_error(const CorpusSource& src, std::size_t row, const std::string& msg) {
    return src.path + ": row " + std::to_string(row) + ": " + msg;
}

inline void read_jsonl(const CorpusSource& src, const CorpusSchema& schema,
                       std::vector<PromptRecord>& out) {
    const std::string content = read_file(src.path);
    std::size_t row = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        const std::string_view line = trim(std::string_view(content).substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(load_error(src, row, std::string("invalid JSON: ") + e.what()));
        }
        auto field = [&](const std::string& name, bool required) -> std::optional<std::string> {
            if (!obj.is_object() || !obj.contains(name)) {
                if (required) throw ValidationError(load_error(src, row, "missing field '" + name + "'"));
                return std::nullopt;
            }
            const auto& v = obj.at(name);
            if (v.is_string()) return v.get<std::string>();
            if (v.is_number_integer()) return std::to_string(v.get<long long>());
            throw ValidationError(load_error(src, row, "field '" + name + "' is not a string"));
        };
        std::string id = *field(schema.id_field, true);
        std::string text = *field(schema.text_field, true);
        std::string corpus = src.corpus_id;
        if (corpus.empty()) corpus = *field(schema.corpus_field, true);
        if (trim(text).empty()) throw ValidationError(load_error(src, row, "empty text"));
        if (corpus.empty()) throw ValidationError(load_error(src, row, "empty corpus_id"));
        out.push_back(make_record(std::move(id), std::move(corpus), std::move(text)));
        ++row;
    }
}

inline void read_delimited(const CorpusSource& src, const CorpusSchema& schema,
                           std::vector<PromptRecord>& out) {
    auto rows = parse_delimited(read_file(src.path), schema.delimiter);
    std::size_t start = schema.has_header ? 1 : 0;
    for (std::size_t r = start; r < rows.size(); ++r) {
        const std::size_t row = r - start;
        const auto& fields = rows[r];
        std::string corpus;
        std::string text;
        if (fields.size() == 2) {
            corpus = src.corpus_id.empty() ? fields[0] : src.corpus_id;
            text = fields[1];
        } else if (fields.size() == 1 && !src.corpus_id.empty()) {
            corpus = src.corpus_id;
            text = fields[0];
        } else {
            throw ValidationError(load_error(src, row, "expected (corpus_id, text) columns, got " +
                                                           std::to_string(fields.size())));
        }
        if (trim(text).empty()) throw ValidationError(load_error(src, row, "empty text"));
        if (corpus.empty()) throw ValidationError(load_error(src, row, "empty corpus_id"));
        std::string id = corpus + "-" + std::to_string(row);
        out.push_back(make_record(std::move(id), std::move(corpus), std::move(text)));
    }
}

}  // namespace detail

/// Reads and concatenates every source in order. Ids must be unique across the
/// merged list; delimited rows get synthesized ids "<corpus_id>-<row>" (0-based).
inline std::vector<PromptRecord> load_corpus(const std::vector<CorpusSource>& sources,
                                             const CorpusSchema& schema = {}) {
    std::vector<PromptRecord> out;
    std::map<std::string, std::string> seen;  // id -> file
    for (const auto& src : sources) {
        const std::size_t first = out.size();
        if (schema.format == CorpusFormat::jsonl)
            detail::read_jsonl(src, schema, out);
        else
            detail::read_delimited(src, schema, out);
        for (std::size_t i = first; i < out.size(); ++i) {
            auto [it, inserted] = seen.emplace(out[i].id, src.path);
            if (!inserted)
                throw ValidationError("duplicate id '" + out[i].id + "' in " + src.path +
                                      " (first seen in " + it->second + ")");
        }
    }
    return out;
}

/// Corpus ids in order of first appearance.
inline std::vector<std::string> corpus_ids(const std::vector<PromptRecord>& records) {
    std::vector<std::string> ids;
    std::unordered_set<std::string> seen;
    for (const auto& r : records)
        if (seen.insert(r.corpus_id).second) ids.push_back(r.corpus_id);
    return ids;
}

// ---------------------------------------------------------------------------
// Power analysis

enum class Tails { one, two };

struct PowerParams {
    double effect_size = 0.5;
    double alpha = 0.05;
    double power = 0.8;
    Tails tails = Tails::two;

    void validate() const {
        if (!(effect_size > 0.0)) throw ValidationError("effect size must be positive");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");
        if (!(power > 0.0 && power < 1.0)) throw ValidationError("power must lie in (0,1)");
        if (!(alpha + (1.0 - power) < 1.0)) throw ValidationError("alpha + (1 - power) must be < 1");
    }
};

/// Unrounded Cohen two-group size, 2 (z_alpha + z_beta)^2 / d^2.
inline double sample_size_exact(const PowerParams& p) {
    p.validate();
    const double tail_alpha = p.tails == Tails::two ? p.alpha / 2.0 : p.alpha;
    const double z_alpha = stats::normal_quantile(1.0 - tail_alpha);
    const double z_beta = stats::normal_quantile(p.power);
    const double s = z_alpha + z_beta;
    return 2.0 * s * s / (p.effect_size * p.effect_size);
}

inline std::size_t required_sample_size(const PowerParams& p) {
    // Guard against 63.000000000001-style rounding noise before the ceiling.
    const double exact = sample_size_exact(p);
    return static_cast<std::size_t>(std::ceil(exact - 1e-9));
}

struct SamplePlan {
    std::size_t n_per_cluster = 0;
    std::size_t k_max = 0;
    double coverage_multiplier = 1.0;
    std::size_t benchmark_count = 0;
    std::size_t n_per_benchmark = 0;
    std::size_t n_total = 0;
};

inline SamplePlan plan_total_sample(std::size_t n_per_cluster, std::size_t k_max,
                                    double coverage_multiplier, std::size_t benchmark_count) {
    if (n_per_cluster < 1 || k_max < 1 || benchmark_count < 1)
        throw ValidationError("sample plan counts must be >= 1");
    if (!(coverage_multiplier >= 1.0)) throw ValidationError("coverage multiplier must be >= 1");
    SamplePlan plan{n_per_cluster, k_max, coverage_multiplier, benchmark_count, 0, 0};
    const double per = static_cast<double>(n_per_cluster) * static_cast<double>(k_max) * coverage_multiplier;
    plan.n_per_benchmark = static_cast<std::size_t>(std::ceil(per - 1e-9));
    plan.n_total = plan.n_per_benchmark * benchmark_count;
    return plan;
}

// ---------------------------------------------------------------------------
// Outliers

enum class OutlierMethod { iqr, zscore };

struct OutlierBounds {
    OutlierMethod method = OutlierMethod::zscore;
    double lower = 0.0;
    double upper = 0.0;
    double q1 = 0.0, q3 = 0.0, iqr = 0.0;
    double mu = 0.0, sigma = 0.0;

    bool contains(double x) const noexcept { return lower <= x && x <= upper; }
};

/// IQR fences use interpolated quartiles; z-score bounds use the population sigma.
inline OutlierBounds outlier_bounds(std::span<const double> lengths, OutlierMethod method) {
    if (lengths.empty()) throw ValidationError("outlier bounds need at least one length");
    OutlierBounds b;
    b.method = method;
    std::vector<double> sorted(lengths.begin(), lengths.end());
    std::sort(sorted.begin(), sorted.end());
    b.q1 = stats::quantile_sorted(sorted, 0.25);
    b.q3 = stats::quantile_sorted(sorted, 0.75);
    b.iqr = b.q3 - b.q1;
    b.mu = stats::mean(sorted);
    b.sigma = stats::stddev(sorted, 0);
    if (method == OutlierMethod::iqr) {
        b.lower = b.q1 - 1.5 * b.iqr;
        b.upper = b.q3 + 1.5 * b.iqr;
    } else {
        b.lower = b.mu - 3.0 * b.sigma;
        b.upper = b.mu + 3.0 * b.sigma;
    }
    return b;
}

inline std::vector<double> lengths_of(const std::vector<PromptRecord>& records) {
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto& r : records) v.push_back(static_cast<double>(r.char_length));
    return v;
}

struct Partition {
    std::vector<PromptRecord> retained;
    std::vector<PromptRecord> removed;
};

inline Partition filter_outliers(const std::vector<PromptRecord>& records, const OutlierBounds& bounds) {
    Partition p;
    for (const auto& r : records)
        (bounds.contains(static_cast<double>(r.char_length)) ? p.retained : p.removed).push_back(r);
    return p;
}

enum class OutlierScope { pooled, per_corpus };

struct OutlierSummary {
    OutlierMethod method = OutlierMethod::zscore;
    OutlierScope scope = OutlierScope::pooled;
    std::map<std::string, OutlierBounds> bounds;  // "pooled" or corpus id
    std::size_t retained = 0;
    std::size_t removed = 0;
};

/// Pooled or per-corpus filtering; input order is preserved in both partitions.
inline Partition filter_corpus(const std::vector<PromptRecord>& records, OutlierMethod method,
                               OutlierScope scope, OutlierSummary* summary = nullptr) {
    if (records.empty()) throw ValidationError("cannot filter an empty corpus");
    std::map<std::string, OutlierBounds> bounds;
    if (scope == OutlierScope::pooled) {
        bounds["pooled"] = outlier_bounds(lengths_of(records), method);
    } else {
        std::map<std::string, std::vector<double>> by_corpus;
        for (const auto& r : records) by_corpus[r.corpus_id].push_back(static_cast<double>(r.char_length));
        for (const auto& [id, v] : by_corpus) bounds[id] = outlier_bounds(v, method);
    }
    Partition p;
    for (const auto& r : records) {
        const auto& b = scope == OutlierScope::pooled ? bounds.at("pooled") : bounds.at(r.corpus_id);
        (b.contains(static_cast<double>(r.char_length)) ? p.retained : p.removed).push_back(r);
    }
    if (summary) {
        *summary = OutlierSummary{method, scope, std::move(bounds), p.retained.size(), p.removed.size()};
    }
    return p;
}

// ---------------------------------------------------------------------------
// Sampling

struct Shortfall {
    std::string corpus_id;
    std::size_t requested = 0;
    std::size_t available = 0;
};

struct SampleResult {
    std::vector<PromptRecord> records;
    std::vector<Shortfall> shortfalls;
};

/// Uniform draw without replacement of min(quota, available) records per corpus.
/// Each corpus uses its own stream derived from (seed, corpus_id), and selected
/// records keep their input order.
inline SampleResult stratified_sample(const std::vector<PromptRecord>& records, const SamplePlan& plan,
                                      std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < records.size(); ++i) members[records[i].corpus_id].push_back(i);

    SampleResult result;
    std::vector<std::size_t> chosen;
    for (auto& [corpus, idx] : members) {
        const std::size_t quota = plan.n_per_benchmark;
        if (idx.size() <= quota) {
            if (idx.size() < quota) result.shortfalls.push_back({corpus, quota, idx.size()});
            chosen.insert(chosen.end(), idx.begin(), idx.end());
            continue;
        }
        Rng rng(derive_seed(seed, corpus));
        // Partial Fisher-Yates: the first `quota` slots end up a uniform subset.
        for (std::size_t i = 0; i < quota; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota));
    }
    std::sort(chosen.begin(), chosen.end());
    result.records.reserve(chosen.size());
    for (std::size_t i : chosen) result.records.push_back(records[i]);
    return result;
}

// ---------------------------------------------------------------------------
// Length statistics

struct LengthSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double sigma = 0.0;
};

struct CorpusStats {
    std::map<std::string, LengthSummary> per_corpus;
    LengthSummary pooled;
};

inline LengthSummary summarize_lengths(std::vector<double> lengths) {
    if (lengths.empty()) throw ValidationError("length statistics need at least one record");
    std::sort(lengths.begin(), lengths.end());
    LengthSummary s;
    s.count = lengths.size();
    s.mean = stats::mean(lengths);
    s.median = stats::quantile_sorted(lengths, 0.5);
    s.q1 = stats::quantile_sorted(lengths, 0.25);
    s.q3 = stats::quantile_sorted(lengths, 0.75);
    s.sigma = stats::stddev(lengths, 0);
    return s;
}

inline CorpusStats compute_length_stats(const std::vector<PromptRecord>& records) {
    CorpusStats st;
    std::map<std::string, std::vector<double>> by_corpus;
    for (const auto& r : records) by_corpus[r.corpus_id].push_back(static_cast<double>(r.char_length));
    for (auto& [id, v] : by_corpus) st.per_corpus[id] = summarize_lengths(std::move(v));
    st.pooled = summarize_lengths(lengths_of(records));
    return st;
}

}  // namespace semortho
