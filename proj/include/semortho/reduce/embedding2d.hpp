#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "semortho/core/error.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/text.hpp"

namespace semortho {

/// Output of a reducer: n x 2 coordinates aligned to the input rows.
struct Embedding2D {
    RowMatrix coords;
    std::vector<std::string> row_ids;
    std::map<std::string, std::string> params;      // echo of the reducer settings
    std::map<std::string, double> diagnostics;      // reducer-specific numbers (KL, init mode, ...)
    std::vector<std::string> warnings;
    std::chrono::duration<double> wall_time{0};

    std::size_t rows() const noexcept { return coords.rows(); }
};

inline void require_finite(const RowMatrix& m, const char* what) {
    for (double v : m.data())
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + " contains non-finite values");
}

/// Delimited export "id,x,y" with a header row.
inline std::string coords_csv(const Embedding2D& e) {
    CsvWriter w({"id", "x", "y"});
    for (std::size_t i = 0; i < e.rows(); ++i)
        w.add({e.row_ids[i], format_double(e.coords(i, 0)), format_double(e.coords(i, 1))});
    return w.str();
}

/// Reads the first three columns (id, x, y) of a headed coordinate table.
inline Embedding2D read_coords_csv(const std::string& path) {
    const auto rows = parse_delimited(read_file(path));
    if (rows.empty()) throw ValidationError(path + ": empty coordinate file");
    Embedding2D e;
    std::vector<double> data;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() < 3) throw ValidationError(path + ": row " + std::to_string(r) + " needs id,x,y");
        e.row_ids.push_back(rows[r][0]);
        data.push_back(parse_double(rows[r][1], "x"));
        data.push_back(parse_double(rows[r][2], "y"));
    }
    e.coords = RowMatrix(e.row_ids.size(), 2, std::move(data));
    return e;
}

}  // namespace semortho
