#pragma once

#include <variant>

#include "semortho/reduce/embedding2d.hpp"
#include "semortho/reduce/trustworthiness.hpp"
#include "semortho/reduce/tsne.hpp"
#include "semortho/reduce/umap.hpp"

namespace semortho {

using ReducerParams = std::variant<UmapParams, TsneParams>;

inline Embedding2D reduce(const RowMatrix& x, const std::vector<std::string>& row_ids, const ReducerParams& params,
                          const Metric& metric, unsigned threads = 1) {
    if (const auto* u = std::get_if<UmapParams>(&params)) return umap_fit(x, row_ids, *u, metric, threads);
    return tsne_fit(x, row_ids, std::get<TsneParams>(params), metric, threads);
}

}  // namespace semortho
