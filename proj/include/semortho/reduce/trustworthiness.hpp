#pragma once

#include <string>
#include <vector>

#include "semortho/core/error.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/parallel.hpp"
#include "semortho/geometry.hpp"

namespace semortho {

/// Rank-based neighbor preservation in [0, 1]:
///   T = 1 - 2 / (n k (2n - 3k - 1)) * sum_i sum_{j in U_k(i)} (r(i, j) - k)
/// where U_k(i) holds the low-dimensional k-neighbors of i that are not among
/// its original-space k-neighbors and r(i, j) is j's 1-based rank around i in
/// the original space (ties broken by row index).
inline double trustworthiness(const RowMatrix& original, const RowMatrix& coords, std::size_t k,
                              const Metric& metric = {}, unsigned threads = 1) {
    const std::size_t n = original.rows();
    if (coords.rows() != n) throw ValidationError("trustworthiness: row counts differ");
    if (!(2 * k < n)) throw ValidationError("trustworthiness requires k < n/2");
    const NeighborGraph low = knn_graph(coords, k, Metric{}, threads);
    const RowMatrix space = metric.to_euclidean_space(original);
    const std::size_t d = space.cols();

    std::vector<double> penalty(n, 0.0);
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> dist(n);
        for (std::size_t i = begin; i < end; ++i) {
            const double* xi = space.row(i).data();
            for (std::size_t j = 0; j < n; ++j) {
                const double* xj = space.row(j).data();
                double ss = 0.0;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = xi[t] - xj[t];
                    ss += diff * diff;
                }
                dist[j] = ss;
            }
            for (std::size_t j : low.neighbors(i)) {
                std::size_t rank = 1;
                for (std::size_t l = 0; l < n; ++l) {
                    if (l == i || l == j) continue;
                    if (dist[l] < dist[j] || (dist[l] == dist[j] && l < j)) ++rank;
                }
                if (rank > k) penalty[i] += static_cast<double>(rank - k);
            }
        }
    });
    double total = 0.0;
    for (double v : penalty) total += v;
    const double nd = static_cast<double>(n), kd = static_cast<double>(k);
    return 1.0 - total * 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0));
}

}  // namespace semortho
