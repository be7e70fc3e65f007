#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <future>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "semortho/core/error.hpp"
#include "semortho/core/http.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/text.hpp"
#include "semortho/corpus.hpp"

namespace semortho {

/// n x D block of vectors whose row i belongs to prompt row_ids[i].
struct EmbeddingMatrix {
    std::string model_id;
    std::size_t dim = 0;
    RowMatrix vectors;
    std::vector<std::string> row_ids;
    bool normalized = false;

    std::size_t rows() const noexcept { return vectors.rows(); }

    /// Rows reordered/subset to `ids`; every id must be present.
    EmbeddingMatrix subset(const std::vector<std::string>& ids) const {
        std::unordered_map<std::string, std::size_t> pos;
        pos.reserve(row_ids.size());
        for (std::size_t i = 0; i < row_ids.size(); ++i) pos.emplace(row_ids[i], i);
        std::vector<std::size_t> rows;
        rows.reserve(ids.size());
        for (const auto& id : ids) {
            auto it = pos.find(id);
            if (it == pos.end()) throw ValidationError("embedding matrix has no row for id '" + id + "'");
            rows.push_back(it->second);
        }
        return {model_id, dim, select_rows(vectors, rows), ids, normalized};
    }
};

// ---------------------------------------------------------------------------
// Vector file
//
// Header: ASCII lines terminated by '\n', in this exact order:
//   SEMVEC 1
//   dim <D>
//   count <N>
//   model_id <string to end of line>
//   encoding text|f32le
//   <empty line>
// Body (text):  N lines "<id>\t<v_0> <v_1> ... <v_{D-1}>"
// Body (f32le): N records of [u32 LE id byte length][id bytes][D x IEEE-754 f32 LE]

enum class VectorEncoding { text, f32le };

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline void append_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline float read_f32le(const unsigned char* p) {
    return std::bit_cast<float>(read_u32le(p));
}

}  // namespace detail

/// Parses a vector file as stored; rows keep file order.
inline EmbeddingMatrix read_vector_file(const std::string& path) {
    const std::string data = read_file(path);
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const auto eol = data.find('\n', pos);
        if (eol == std::string::npos) throw ValidationError(path + ": truncated vector file header");
        std::string line = data.substr(pos, eol - pos);
        pos = eol + 1;
        return line;
    };
    auto keyed = [&](const std::string& key) {
        std::string line = next_line();
        if (line.rfind(key + " ", 0) != 0) throw ValidationError(path + ": expected header field '" + key + "'");
        return line.substr(key.size() + 1);
    };
    if (next_line() != "SEMVEC 1") throw ValidationError(path + ": not a SEMVEC 1 vector file");
    const auto dim = parse_int(keyed("dim"), "dim");
    const auto count = parse_int(keyed("count"), "count");
    if (dim <= 0 || count < 0) throw ValidationError(path + ": invalid dim/count in header");
    EmbeddingMatrix m;
    m.model_id = keyed("model_id");
    const std::string enc = keyed("encoding");
    if (!next_line().empty()) throw ValidationError(path + ": header must end with an empty line");
    m.dim = static_cast<std::size_t>(dim);
    const auto n = static_cast<std::size_t>(count);
    m.vectors = RowMatrix(n, m.dim);
    m.row_ids.reserve(n);

    auto check_finite = [&](double v, std::size_t row) {
        if (!std::isfinite(v))
            throw ValidationError(path + ": non-finite value in row " + std::to_string(row) + " (id '" +
                                  m.row_ids.back() + "')");
    };

    if (enc == "text") {
        for (std::size_t i = 0; i < n; ++i) {
            const std::string line = next_line();
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw ValidationError(path + ": row " + std::to_string(i) + " lacks an id");
            m.row_ids.push_back(line.substr(0, tab));
            std::string_view rest = std::string_view(line).substr(tab + 1);
            std::size_t d = 0;
            while (true) {
                rest = trim(rest);
                if (rest.empty()) break;
                const auto sp = rest.find(' ');
                const auto tok = rest.substr(0, sp);
                if (d >= m.dim)
                    throw ValidationError(path + ": dimension mismatch in row " + std::to_string(i) +
                                          " (more than " + std::to_string(m.dim) + " values)");
                const double v = parse_double(tok, "vector component");
                check_finite(v, i);
                m.vectors(i, d++) = v;
                if (sp == std::string_view::npos) break;
                rest = rest.substr(sp + 1);
            }
            if (d != m.dim)
                throw ValidationError(path + ": dimension mismatch in row " + std::to_string(i) + " (" +
                                      std::to_string(d) + " values, header says " + std::to_string(m.dim) + ")");
        }
    } else if (enc == "f32le") {
        const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
        for (std::size_t i = 0; i < n; ++i) {
            if (pos + 4 > data.size()) throw ValidationError(path + ": truncated binary body");
            const std::uint32_t len = detail::read_u32le(bytes + pos);
            pos += 4;
            if (pos + len + 4 * m.dim > data.size()) throw ValidationError(path + ": truncated binary body");
            m.row_ids.emplace_back(data.data() + pos, len);
            pos += len;
            for (std::size_t d = 0; d < m.dim; ++d, pos += 4) {
                const double v = detail::read_f32le(bytes + pos);
                check_finite(v, i);
                m.vectors(i, d) = v;
            }
        }
        if (pos != data.size()) throw ValidationError(path + ": trailing bytes after " + std::to_string(n) + " rows");
    } else {
        throw ValidationError(path + ": unknown encoding '" + enc + "'");
    }
    return m;
}

inline void write_vector_file(const std::string& path, const EmbeddingMatrix& m,
                              VectorEncoding encoding = VectorEncoding::f32le) {
    std::string out = "SEMVEC 1\ndim " + std::to_string(m.dim) + "\ncount " + std::to_string(m.rows()) +
                      "\nmodel_id " + m.model_id + "\nencoding " +
                      (encoding == VectorEncoding::text ? "text" : "f32le") + "\n\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (encoding == VectorEncoding::text) {
            out += m.row_ids[i];
            out += '\t';
            for (std::size_t d = 0; d < m.dim; ++d) {
                if (d) out += ' ';
                out += format_double(m.vectors(i, d));
            }
            out += '\n';
        } else {
            detail::append_u32le(out, static_cast<std::uint32_t>(m.row_ids[i].size()));
            out += m.row_ids[i];
            for (std::size_t d = 0; d < m.dim; ++d)
                detail::append_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.vectors(i, d))));
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::runtime, "cannot write " + path);
    f << out;
}

/// Loads a vector file and reorders it to match `expected_ids` exactly.
inline EmbeddingMatrix import_embeddings(const std::string& path, const std::vector<std::string>& expected_ids) {
    EmbeddingMatrix file = read_vector_file(path);
    std::unordered_map<std::string, std::size_t> pos;
    pos.reserve(file.row_ids.size());
    for (std::size_t i = 0; i < file.row_ids.size(); ++i)
        if (!pos.emplace(file.row_ids[i], i).second)
            throw ValidationError(path + ": duplicate id '" + file.row_ids[i] + "'");

    auto list = [](const std::vector<std::string>& ids) {
        std::string s;
        for (std::size_t i = 0; i < ids.size() && i < 10; ++i) s += (i ? ", " : "") + ids[i];
        if (ids.size() > 10) s += ", ... (" + std::to_string(ids.size()) + " total)";
        return s;
    };
    std::vector<std::string> missing;
    std::unordered_map<std::string, bool> wanted;
    wanted.reserve(expected_ids.size());
    for (const auto& id : expected_ids) {
        wanted.emplace(id, true);
        if (!pos.contains(id)) missing.push_back(id);
    }
    if (!missing.empty()) throw ValidationError(path + ": id mismatch, missing ids: " + list(missing));
    std::vector<std::string> extra;
    for (const auto& id : file.row_ids)
        if (!wanted.contains(id)) extra.push_back(id);
    if (!extra.empty()) throw ValidationError(path + ": id mismatch, unexpected ids: " + list(extra));
    return file.subset(expected_ids);
}

inline EmbeddingMatrix l2_normalize(EmbeddingMatrix m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto row = m.vectors.row(i);
        double ss = 0.0;
        for (double v : row) ss += v * v;
        const double norm = std::sqrt(ss);
        if (!(norm > 0.0)) throw NumericalError("zero-norm embedding row for id '" + m.row_ids[i] + "'");
        for (double& v : row) v /= norm;
    }
    m.normalized = true;
    return m;
}

// ---------------------------------------------------------------------------
// Embedding service client
//
// Request:  {"model": <model_id>, "input": [<text>, ...]}
// Response: {"model": <id>, "data": [{"index": i, "embedding": [...]}, ...]}

struct EmbeddingClientConfig {
    ServiceConfig service;
    std::size_t batch_size = 64;
    unsigned parallelism = 1;

    void validate() const {
        if (batch_size < 1) throw ValidationError("embedding batch_size must be >= 1");
        if (service.endpoint.empty()) throw ValidationError("embedding endpoint is empty");
    }
};

namespace detail {

inline std::vector<std::vector<double>> fetch_batch(const EmbeddingClientConfig& cfg,
                                                    const std::vector<PromptRecord>& records,
                                                    std::size_t begin, std::size_t end, std::string& model) {
    nlohmann::json body;
    body["model"] = cfg.service.model_id;
    body["input"] = nlohmann::json::array();
    for (std::size_t i = begin; i < end; ++i) body["input"].push_back(records[i].text);
    const auto res = post_json(cfg.service, body);
    if (!res.contains("data") || !res["data"].is_array())
        throw ServiceError("embedding response lacks a 'data' array");
    const auto& data = res["data"];
    if (data.size() != end - begin)
        throw ServiceError("embedding response has " + std::to_string(data.size()) + " vectors for " +
                           std::to_string(end - begin) + " inputs");
    std::vector<std::vector<double>> out(data.size());
    for (std::size_t j = 0; j < data.size(); ++j) {
        const auto& item = data[j];
        const std::size_t slot = item.contains("index") ? item["index"].get<std::size_t>() : j;
        if (slot >= out.size() || !out[slot].empty()) throw ServiceError("embedding response has bad indices");
        out[slot] = item.at("embedding").get<std::vector<double>>();
    }
    model = res.value("model", cfg.service.model_id);
    return out;
}

}  // namespace detail

/// Embeds `records` in batches; rows come back in record order whatever the
/// batch size or parallelism.
inline EmbeddingMatrix fetch_embeddings(const EmbeddingClientConfig& cfg, const std::vector<PromptRecord>& records) {
    cfg.validate();
    const std::size_t n = records.size();
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<std::vector<std::vector<double>>> results(batches);
    std::vector<std::string> models(batches);

    const std::size_t wave = std::max<unsigned>(1, cfg.parallelism);
    for (std::size_t first = 0; first < batches; first += wave) {
        const std::size_t last = std::min(batches, first + wave);
        std::vector<std::future<void>> inflight;
        for (std::size_t b = first; b < last; ++b) {
            inflight.push_back(std::async(wave == 1 ? std::launch::deferred : std::launch::async, [&, b] {
                const std::size_t begin = b * cfg.batch_size;
                results[b] = detail::fetch_batch(cfg, records, begin, std::min(n, begin + cfg.batch_size), models[b]);
            }));
        }
        for (std::size_t b = first; b < last; ++b) {
            try {
                inflight[b - first].get();
            } catch (const Error& e) {
                for (std::size_t r = b + 1; r < last; ++r) inflight[r - first].wait();
                throw ServiceError("embedding batch " + std::to_string(b) + " failed: " + e.what());
            }
        }
    }

    EmbeddingMatrix m;
    m.model_id = models.empty() ? cfg.service.model_id : models.front();
    m.row_ids.reserve(n);
    for (const auto& r : records) m.row_ids.push_back(r.id);
    for (std::size_t b = 0; b < batches; ++b) {
        for (const auto& v : results[b]) {
            if (m.dim == 0) m.dim = v.size();
            if (v.size() != m.dim)
                throw ServiceError("embedding dimension drift: batch " + std::to_string(b) + " returned dim " +
                                   std::to_string(v.size()) + ", expected " + std::to_string(m.dim));
        }
    }
    if (m.dim == 0 && n > 0) throw ServiceError("embedding service returned empty vectors");
    m.vectors = RowMatrix(n, m.dim);
    std::size_t row = 0;
    for (const auto& batch : results)
        for (const auto& v : batch) {
            for (std::size_t d = 0; d < m.dim; ++d) {
                if (!std::isfinite(v[d])) throw ServiceError("non-finite embedding value for id '" + m.row_ids[row] + "'");
                m.vectors(row, d) = v[d];
            }
            ++row;
        }
    return m;
}

}  // namespace semortho
