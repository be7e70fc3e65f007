#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semortho/cluster.hpp"
#include "semortho/core/error.hpp"
#include "semortho/core/http.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/parallel.hpp"
#include "semortho/core/text.hpp"
#include "semortho/corpus.hpp"

namespace semortho {

inline const std::string kOtherLabel = "Other";

enum class ExemplarRule { nearest_centroid, boundary };

inline std::string to_string(ExemplarRule r) { return r == ExemplarRule::boundary ? "boundary" : "nearest_centroid"; }

inline ExemplarRule parse_exemplar_rule(std::string_view s) {
    if (s == "nearest_centroid") return ExemplarRule::nearest_centroid;
    if (s == "boundary") return ExemplarRule::boundary;
    throw ValidationError("unknown exemplar rule '" + std::string(s) + "' (expected nearest_centroid or boundary)");
}

struct ExemplarSet {
    std::size_t cluster_id = 0;
    ExemplarRule rule = ExemplarRule::nearest_centroid;
    std::vector<std::size_t> rows;
    std::vector<std::string> exemplar_ids;
    std::vector<std::string> texts;
    std::vector<double> distances;  // 2D Euclidean distance to the cluster centroid
};

/// Per cluster, the `per_cluster` members closest to (nearest_centroid) or
/// farthest from (boundary) their centroid. Ties go to the lower row index.
inline std::vector<ExemplarSet> extract_exemplars(const KMeansModel& model, const RowMatrix& coords,
                                                  const std::vector<PromptRecord>& records,
                                                  std::size_t per_cluster = 4,
                                                  ExemplarRule rule = ExemplarRule::nearest_centroid) {
    const std::size_t n = coords.rows();
    if (model.assignments.size() != n || records.size() != n)
        throw ValidationError("extract_exemplars: model, coordinates and records are not aligned");
    if (model.centroids.cols() != coords.cols())
        throw ValidationError("extract_exemplars: centroid dimension does not match coordinates");

    std::vector<std::vector<std::pair<double, std::size_t>>> members(model.k);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = model.assignments[i];
        if (c >= model.k) throw ValidationError("extract_exemplars: assignment out of range");
        members[c].emplace_back(euclidean(coords.row(i), model.centroids.row(c)), i);
    }
    std::vector<ExemplarSet> out(model.k);
    for (std::size_t c = 0; c < model.k; ++c) {
        auto& m = members[c];
        if (rule == ExemplarRule::nearest_centroid) {
            std::sort(m.begin(), m.end());
        } else {
            std::sort(m.begin(), m.end(), [](const auto& a, const auto& b) {
                return a.first != b.first ? a.first > b.first : a.second < b.second;
            });
        }
        auto& set = out[c];
        set.cluster_id = c;
        set.rule = rule;
        for (std::size_t t = 0; t < std::min(per_cluster, m.size()); ++t) {
            const std::size_t row = m[t].second;
            set.rows.push_back(row);
            set.exemplar_ids.push_back(records[row].id);
            set.texts.push_back(records[row].text);
            set.distances.push_back(m[t].first);
        }
    }
    return out;
}

/// Closed label set: the category names plus 'Other'.
struct Taxonomy {
    std::vector<std::string> labels;

    bool contains(std::string_view s) const { return std::find(labels.begin(), labels.end(), s) != labels.end(); }

    /// Maps a free-text answer to a label. nullopt when nothing matches.
    std::optional<std::string> match(std::string_view answer) const {
        std::string_view s = trim(answer);
        const auto nl = s.find('\n');
        if (nl != std::string_view::npos) s = trim(s.substr(0, nl));
        auto strip = [&](std::string_view chars) {
            while (!s.empty() && chars.find(s.front()) != std::string_view::npos) s.remove_prefix(1);
            while (!s.empty() && chars.find(s.back()) != std::string_view::npos) s.remove_suffix(1);
            s = trim(s);
        };
        strip("\"'`*");
        if (!s.empty() && s.back() == '.') s.remove_suffix(1);
        strip("\"'`*");
        const std::string key = to_lower(s);
        if (key.empty()) return std::nullopt;
        for (const auto& l : labels)
            if (to_lower(l) == key) return l;
        // A single unambiguous '/'-segment ("PII" for "PII/Privacy").
        std::optional<std::string> hit;
        for (const auto& l : labels) {
            std::string_view rest = l;
            while (true) {
                const auto slash = rest.find('/');
                if (to_lower(trim(rest.substr(0, slash))) == key) {
                    if (hit && *hit != l) return std::nullopt;
                    hit = l;
                }
                if (slash == std::string_view::npos) break;
                rest.remove_prefix(slash + 1);
            }
        }
        return hit;
    }
};

inline Taxonomy parse_taxonomy(std::string_view text) {
    Taxonomy t;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto s = trim(line);
        if (s.empty() || s.front() == '#') continue;
        if (t.contains(s)) throw ValidationError("taxonomy lists '" + std::string(s) + "' twice");
        t.labels.emplace_back(s);
    }
    if (t.labels.empty()) throw ValidationError("taxonomy is empty");
    if (!t.contains(kOtherLabel)) t.labels.push_back(kOtherLabel);
    return t;
}

inline Taxonomy load_taxonomy(const std::string& path) { return parse_taxonomy(read_file(path)); }

/// Deterministic prompt for one cluster: exemplars, the closed label list and
/// the 'Other' instruction.
inline std::string render_label_prompt(const ExemplarSet& set, const Taxonomy& taxonomy) {
    std::ostringstream p;
    p << "The following prompts were grouped together by a clustering of safety benchmark prompts.\n\n";
    for (std::size_t i = 0; i < set.texts.size(); ++i) p << "Prompt " << (i + 1) << ": " << set.texts[i] << "\n";
    p << "\nWhich single harm category best describes this group? Choose exactly one of:\n";
    for (const auto& l : taxonomy.labels)
        if (l != kOtherLabel) p << "- " << l << "\n";
    p << "\nIf none of the categories fits, answer Other.\n"
      << "Answer with the category name only, on a single line.\n";
    return p.str();
}

struct LabelVote {
    std::size_t cluster_id = 0;
    std::vector<std::string> runs;
    std::string final_label;
    double agreement = 0.0;
    std::size_t unparseable = 0;
    std::vector<std::string> warnings;
};

using LabelOracle = std::function<std::string(const std::string& prompt)>;

struct LabelOptions {
    std::size_t runs = 5;
    std::size_t max_tiebreak_calls = 2;
    unsigned threads = 1;
};

/// Majority vote over `runs` answers; ties trigger up to `max_tiebreak_calls`
/// further calls and are then settled by lexicographic order.
inline LabelVote vote_cluster(const ExemplarSet& set, const Taxonomy& taxonomy, const LabelOracle& oracle,
                              const LabelOptions& opt) {
    if (opt.runs < 1) throw ValidationError("label runs must be >= 1");
    const std::string prompt = render_label_prompt(set, taxonomy);
    LabelVote v;
    v.cluster_id = set.cluster_id;
    auto ask = [&] {
        const auto label = taxonomy.match(oracle(prompt));
        if (!label) ++v.unparseable;
        v.runs.push_back(label.value_or(kOtherLabel));
    };
    auto leaders = [&] {
        std::map<std::string, std::size_t> counts;
        for (const auto& r : v.runs) ++counts[r];
        std::size_t top = 0;
        for (const auto& [_, c] : counts) top = std::max(top, c);
        std::vector<std::string> out;
        for (const auto& [l, c] : counts)
            if (c == top) out.push_back(l);  // map order is lexicographic
        return out;
    };
    for (std::size_t r = 0; r < opt.runs; ++r) ask();
    auto top = leaders();
    for (std::size_t extra = 0; top.size() > 1 && extra < opt.max_tiebreak_calls; ++extra) {
        ask();
        top = leaders();
    }
    if (v.unparseable == v.runs.size()) {
        v.final_label = kOtherLabel;
        v.agreement = 0.0;
        v.warnings.push_back("cluster " + std::to_string(set.cluster_id) +
                             ": no response could be parsed into the taxonomy; labeled Other");
        return v;
    }
    v.final_label = top.front();
    v.agreement = static_cast<double>(std::count(v.runs.begin(), v.runs.end(), v.final_label)) /
                  static_cast<double>(v.runs.size());
    return v;
}

/// Clusters are labeled concurrently; runs within a cluster are sequential.
inline std::vector<LabelVote> request_labels(const LabelOracle& oracle, const std::vector<ExemplarSet>& exemplars,
                                             const Taxonomy& taxonomy, const LabelOptions& opt = {}) {
    std::vector<LabelVote> out(exemplars.size());
    parallel_for(exemplars.size(), std::max(1u, opt.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) out[i] = vote_cluster(exemplars[i], taxonomy, oracle, opt);
    });
    return out;
}

/// Chat-completions client: {"model", "messages": [{"role": "user", ...}]} in,
/// choices[0].message.content out.
inline LabelOracle chat_completion_oracle(ServiceConfig cfg) {
    return [cfg = std::move(cfg)](const std::string& prompt) {
        const nlohmann::json body = {{"model", cfg.model_id},
                                     {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
        const auto res = post_json(cfg, body);
        try {
            return res.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw ServiceError(cfg.endpoint + ": response has no choices[0].message.content");
        }
    };
}

/// Offline labels: delimited file with header `cluster,label`.
inline std::map<std::size_t, std::string> read_label_file(const std::string& path, const Taxonomy& taxonomy) {
    const auto rows = parse_delimited(read_file(path));
    if (rows.empty() || rows[0].size() < 2 || to_lower(trim(rows[0][0])) != "cluster" ||
        to_lower(trim(rows[0][1])) != "label")
        throw ValidationError(path + ": expected header 'cluster,label'");
    std::map<std::size_t, std::string> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && trim(row[0]).empty()) continue;
        const std::string where = path + " row " + std::to_string(r + 1);
        if (row.size() != 2) throw ValidationError(where + ": expected 2 fields");
        const long long c = parse_int(trim(row[0]), where + " cluster");
        if (c < 0) throw ValidationError(where + ": negative cluster id");
        const auto label = taxonomy.match(row[1]);
        if (!label) throw ValidationError(where + ": '" + row[1] + "' is not in the taxonomy");
        if (!out.emplace(static_cast<std::size_t>(c), *label).second)
            throw ValidationError(where + ": cluster " + row[0] + " labeled twice");
    }
    return out;
}

/// Votes for file-provided labels (agreement 1, a single run). Clusters absent
/// from the map stay unlabeled with a warning.
inline std::vector<LabelVote> labels_from_map(const std::map<std::size_t, std::string>& labels, std::size_t k,
                                              const std::string& missing = "has no label in the label file") {
    std::vector<LabelVote> out(k);
    for (std::size_t c = 0; c < k; ++c) {
        out[c].cluster_id = c;
        auto it = labels.find(c);
        if (it == labels.end()) {
            out[c].warnings.push_back("cluster " + std::to_string(c) + " " + missing);
            continue;
        }
        out[c].runs = {it->second};
        out[c].final_label = it->second;
        out[c].agreement = 1.0;
    }
    return out;
}

}  // namespace semortho
