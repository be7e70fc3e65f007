#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semortho/core/error.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/parallel.hpp"
#include "semortho/core/random.hpp"
#include "semortho/core/text.hpp"
#include "semortho/geometry.hpp"
#include "semortho/reduce/embedding2d.hpp"

namespace semortho {

struct UmapParams {
    std::size_t n_neighbors = 15;  // counts the point itself, as in the reference implementation
    double min_dist = 0.1;
    double spread = 1.0;
    std::size_t epochs = 200;
    std::size_t negative_sample_rate = 5;
    double learning_rate = 1.0;
    std::uint64_t seed = 42;

    void validate(std::size_t n) const {
        if (n_neighbors < 2 || n_neighbors >= n)
            throw ValidationError("umap n_neighbors must satisfy 2 <= n_neighbors < n (n_neighbors=" +
                                  std::to_string(n_neighbors) + ", n=" + std::to_string(n) + ")");
        if (!(min_dist >= 0.0 && min_dist < 1.0)) throw ValidationError("umap min_dist must lie in [0, 1)");
        if (!(spread > 0.0)) throw ValidationError("umap spread must be positive");
        if (epochs < 1) throw ValidationError("umap epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ValidationError("umap learning rate must be positive");
    }
};

/// Symmetric sparse graph in CSR form; row i lists (col, weight) with ascending col.
struct FuzzyGraph {
    std::vector<std::size_t> row_start;  // n + 1 entries
    std::vector<std::size_t> cols;
    std::vector<double> weights;

    std::size_t rows() const noexcept { return row_start.empty() ? 0 : row_start.size() - 1; }

    double weight(std::size_t i, std::size_t j) const {
        auto b = cols.begin() + static_cast<std::ptrdiff_t>(row_start[i]);
        auto e = cols.begin() + static_cast<std::ptrdiff_t>(row_start[i + 1]);
        auto it = std::lower_bound(b, e, j);
        return (it != e && *it == j) ? weights[static_cast<std::size_t>(it - cols.begin())] : 0.0;
    }
};

namespace umap_detail {

struct Bandwidth {
    double rho = 0.0;
    double sigma = 0.0;
};

/// Per-point rho (nearest nonzero distance) and sigma such that
/// sum_j exp(-max(0, d_j - rho) / sigma) == log2(n_neighbors).
inline Bandwidth calibrate(std::span<const double> dists, double target, double mean_all) {
    constexpr int iterations = 64;
    constexpr double tolerance = 1e-5;
    constexpr double min_scale = 1e-3;
    Bandwidth bw;
    for (double d : dists)
        if (d > 0.0) {
            bw.rho = d;
            break;
        }
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
    for (int it = 0; it < iterations; ++it) {
        double psum = 0.0;
        for (double d : dists) {
            const double gap = d - bw.rho;
            psum += gap > 0.0 ? std::exp(-gap / mid) : 1.0;
        }
        if (std::abs(psum - target) < tolerance) break;
        if (psum > target) {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
        }
    }
    double mean_i = 0.0;
    for (double d : dists) mean_i += d;
    mean_i /= static_cast<double>(dists.size());
    bw.sigma = std::max(mid, min_scale * (bw.rho > 0.0 ? mean_i : mean_all));
    return bw;
}

}  // namespace umap_detail

/// Weighted kNN graph with smooth-kNN memberships, symmetrized as A + A^T - A.*A^T.
inline FuzzyGraph fuzzy_graph(const RowMatrix& x, const UmapParams& params, const Metric& metric,
                              unsigned threads = 1) {
    const std::size_t n = x.rows();
    params.validate(n);
    const std::size_t k = params.n_neighbors - 1;
    const NeighborGraph knn = knn_graph(x, k, metric, threads);

    double mean_all = 0.0;
    for (double d : knn.distances) mean_all += d;
    mean_all /= static_cast<double>(knn.distances.size());
    const double target = std::log2(static_cast<double>(params.n_neighbors));

    // Directed memberships, each row sorted by column.
    std::vector<std::vector<std::pair<std::size_t, double>>> directed(n);
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto dists = knn.neighbor_distances(i);
            const auto bw = umap_detail::calibrate(dists, target, mean_all);
            auto& row = directed[i];
            row.reserve(k);
            for (std::size_t t = 0; t < k; ++t) {
                const double gap = dists[t] - bw.rho;
                const double w = (gap <= 0.0 || bw.sigma == 0.0) ? 1.0 : std::exp(-gap / bw.sigma);
                row.emplace_back(knn.neighbors(i)[t], w);
            }
            std::sort(row.begin(), row.end());
        }
    });
    auto lookup = [&](std::size_t i, std::size_t j) {
        const auto& row = directed[i];
        auto it = std::lower_bound(row.begin(), row.end(), std::make_pair(j, -1.0));
        return (it != row.end() && it->first == j) ? it->second : 0.0;
    };

    std::vector<std::vector<std::size_t>> incoming(n);
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& [j, w] : directed[i]) incoming[j].push_back(i);

    FuzzyGraph g;
    g.row_start.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> nbrs;
        nbrs.reserve(directed[i].size() + incoming[i].size());
        for (const auto& [j, w] : directed[i]) nbrs.push_back(j);
        nbrs.insert(nbrs.end(), incoming[i].begin(), incoming[i].end());
        std::sort(nbrs.begin(), nbrs.end());
        nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
        for (std::size_t j : nbrs) {
            const double a = lookup(i, j);
            const double b = lookup(j, i);
            // (a + b) - a * b is bitwise symmetric in (a, b).
            const double w = (a + b) - a * b;
            if (w > 0.0) {
                g.cols.push_back(j);
                g.weights.push_back(w);
            }
        }
        g.row_start[i + 1] = g.cols.size();
    }
    return g;
}

/// Fits (a, b) of 1 / (1 + a d^{2b}) to the min_dist/spread target curve by
/// Levenberg-Marquardt over 300 points on [0, 3 spread].
inline std::pair<double, double> fit_curve_ab(double min_dist, double spread = 1.0) {
    constexpr int samples = 300;
    std::vector<double> xs(samples), ys(samples);
    for (int i = 0; i < samples; ++i) {
        xs[i] = 3.0 * spread * static_cast<double>(i) / static_cast<double>(samples - 1);
        ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
    }
    auto sse = [&](double a, double b) {
        double s = 0.0;
        for (int i = 0; i < samples; ++i) {
            const double r = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b)) - ys[i];
            s += r * r;
        }
        return s;
    };
    double a = 1.0, b = 1.0, lambda = 1e-3;
    double cost = sse(a, b);
    for (int it = 0; it < 500; ++it) {
        Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
        Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
        for (int i = 0; i < samples; ++i) {
            const double x = xs[i];
            if (x <= 0.0) continue;  // residual is constant there
            const double p = std::pow(x, 2.0 * b);
            const double den = 1.0 + a * p;
            const double r = 1.0 / den - ys[i];
            const Eigen::Vector2d jac(-p / (den * den), -a * p * 2.0 * std::log(x) / (den * den));
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        bool improved = false;
        for (int tries = 0; tries < 20 && !improved; ++tries) {
            Eigen::Matrix2d damped = jtj;
            damped.diagonal() *= (1.0 + lambda);
            const Eigen::Vector2d step = damped.ldlt().solve(-jtr);
            const double na = a + step(0), nb = b + step(1);
            const double ncost = (na > 0.0 && nb > 0.0) ? sse(na, nb) : std::numeric_limits<double>::infinity();
            if (ncost < cost) {
                const bool converged = cost - ncost < 1e-15 * std::max(1.0, cost);
                a = na;
                b = nb;
                cost = ncost;
                lambda = std::max(lambda / 10.0, 1e-12);
                improved = true;
                if (converged) return {a, b};
            } else {
                lambda *= 10.0;
            }
        }
        if (!improved) break;
    }
    return {a, b};
}

namespace umap_detail {

/// Two leading nontrivial eigenvectors of D^{-1/2} W D^{-1/2} by block subspace
/// iteration on (I + M)/2 with the sqrt-degree vector deflated.
inline bool spectral_layout(const FuzzyGraph& g, std::uint64_t seed, RowMatrix& out) {
    const std::size_t n = g.rows();
    constexpr std::size_t block = 6;
    constexpr int iterations = 300;
    if (n < block + 2) return false;
    Eigen::VectorXd inv_sqrt_deg(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (std::size_t e = g.row_start[i]; e < g.row_start[i + 1]; ++e) deg += g.weights[e];
        if (!(deg > 0.0)) return false;
        inv_sqrt_deg(static_cast<Eigen::Index>(i)) = 1.0 / std::sqrt(deg);
    }
    Eigen::VectorXd trivial = inv_sqrt_deg.cwiseInverse();
    trivial.normalize();

    auto apply = [&](const Eigen::MatrixXd& v) {
        Eigen::MatrixXd out_m = 0.5 * v;
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            for (std::size_t e = g.row_start[i]; e < g.row_start[i + 1]; ++e) {
                const auto jj = static_cast<Eigen::Index>(g.cols[e]);
                const double w = 0.5 * g.weights[e] * inv_sqrt_deg(ii) * inv_sqrt_deg(jj);
                out_m.row(ii) += w * v.row(jj);
            }
        }
        return out_m;
    };
    auto orthonormalize = [&](Eigen::MatrixXd& v) {
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            v.col(c) -= trivial * trivial.dot(v.col(c));
            for (Eigen::Index p = 0; p < c; ++p) v.col(c) -= v.col(p) * v.col(p).dot(v.col(c));
            const double norm = v.col(c).norm();
            if (!(norm > 1e-300)) return false;
            v.col(c) /= norm;
        }
        return true;
    };

    Rng rng(seed);
    Eigen::MatrixXd v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(block));
    for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index c = 0; c < v.cols(); ++c) v(i, c) = rng.normal();
    if (!orthonormalize(v)) return false;
    for (int it = 0; it < iterations; ++it) {
        v = apply(v);
        if (!orthonormalize(v)) return false;
    }
    const Eigen::MatrixXd mv = apply(v);
    const Eigen::MatrixXd t = v.transpose() * mv;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (t + t.transpose()));
    if (eig.info() != Eigen::Success) return false;
    // Eigenvalues ascend; the two largest are the layout axes.
    const Eigen::MatrixXd ritz = v * eig.eigenvectors().rightCols(2).rowwise().reverse();
    if (!ritz.allFinite()) return false;
    out = RowMatrix(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        out(i, 0) = ritz(static_cast<Eigen::Index>(i), 0);
        out(i, 1) = ritz(static_cast<Eigen::Index>(i), 1);
    }
    return true;
}

inline double clip4(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace umap_detail

/// UMAP to two dimensions.
///
/// The layout is optimized in deterministic batch mode: each epoch evaluates
/// every scheduled edge sample against the positions at the start of the epoch
/// (heads only; the graph is symmetric so every edge is seen from both ends),
/// then applies one Adam step per point. Negative-sample targets come from a
/// counter-based hash of (seed, epoch, edge, sample), so results do not depend
/// on the worker count.
inline Embedding2D umap_fit(const RowMatrix& x, const std::vector<std::string>& row_ids, const UmapParams& params,
                            const Metric& metric, unsigned threads = 1) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t n = x.rows();
    params.validate(n);
    require_finite(x, "umap input");
    if (row_ids.size() != n) throw ValidationError("umap: row id count does not match matrix rows");

    FuzzyGraph graph = fuzzy_graph(x, params, metric, threads);

    // Drop edges too weak to be sampled within the epoch budget.
    double max_w = 0.0;
    for (double w : graph.weights) max_w = std::max(max_w, w);
    {
        FuzzyGraph pruned;
        pruned.row_start.assign(n + 1, 0);
        const double floor_w = max_w / static_cast<double>(params.epochs);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t e = graph.row_start[i]; e < graph.row_start[i + 1]; ++e)
                if (graph.weights[e] >= floor_w) {
                    pruned.cols.push_back(graph.cols[e]);
                    pruned.weights.push_back(graph.weights[e]);
                }
            pruned.row_start[i + 1] = pruned.cols.size();
        }
        graph = std::move(pruned);
    }

    const auto [a, b] = fit_curve_ab(params.min_dist, params.spread);

    Embedding2D out;
    out.row_ids = row_ids;
    RowMatrix y;
    Rng init_rng(derive_seed(params.seed, "umap-init"));
    if (umap_detail::spectral_layout(graph, derive_seed(params.seed, "umap-spectral"), y)) {
        double max_abs = 0.0;
        for (double v : y.data()) max_abs = std::max(max_abs, std::abs(v));
        const double expansion = 10.0 / max_abs;
        for (double& v : y.data()) v = v * expansion + init_rng.normal(0.0, 1e-4);
        out.diagnostics["spectral_init"] = 1.0;
    } else {
        y = RowMatrix(n, 2);
        for (double& v : y.data()) v = init_rng.uniform(-10.0, 10.0);
        out.diagnostics["spectral_init"] = 0.0;
        out.warnings.push_back("spectral initialization failed; used random initialization");
    }
    for (std::size_t c = 0; c < 2; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < n; ++i) {
            lo = std::min(lo, y(i, c));
            hi = std::max(hi, y(i, c));
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < n; ++i) y(i, c) = range > 0.0 ? 10.0 * (y(i, c) - lo) / range : 0.0;
    }

    const std::size_t edges = graph.cols.size();
    std::vector<double> epochs_per_sample(edges), next_sample(edges), per_negative(edges), next_negative(edges);
    const double rate = static_cast<double>(std::max<std::size_t>(1, params.negative_sample_rate));
    for (std::size_t e = 0; e < edges; ++e) {
        epochs_per_sample[e] = max_w / graph.weights[e];
        next_sample[e] = epochs_per_sample[e];
        per_negative[e] = epochs_per_sample[e] / rate;
        next_negative[e] = per_negative[e];
    }

    constexpr double beta1 = 0.5, beta2 = 0.9, adam_eps = 1e-7;
    RowMatrix grad(n, 2), m1(n, 2), m2(n, 2);
    double beta1_t = 1.0, beta2_t = 1.0;
    const std::uint64_t neg_key = derive_seed(params.seed, "umap-negative");
    const bool sample_negatives = params.negative_sample_rate > 0;

    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        const double now = static_cast<double>(epoch);
        std::fill(grad.data().begin(), grad.data().end(), 0.0);
        parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                const double yi0 = y(i, 0), yi1 = y(i, 1);
                double g0 = 0.0, g1 = 0.0;
                for (std::size_t e = graph.row_start[i]; e < graph.row_start[i + 1]; ++e) {
                    if (next_sample[e] > now) continue;
                    const std::size_t j = graph.cols[e];
                    const double d0 = yi0 - y(j, 0), d1 = yi1 - y(j, 1);
                    const double dist2 = d0 * d0 + d1 * d1;
                    if (dist2 > 0.0) {
                        const double coeff = -2.0 * a * b * std::pow(dist2, b - 1.0) / (a * std::pow(dist2, b) + 1.0);
                        g0 += umap_detail::clip4(coeff * d0);
                        g1 += umap_detail::clip4(coeff * d1);
                    }
                    next_sample[e] += epochs_per_sample[e];

                    if (!sample_negatives) continue;
                    const auto n_neg = static_cast<std::size_t>(std::max(0.0, std::floor((now - next_negative[e]) / per_negative[e])));
                    for (std::size_t p = 0; p < n_neg; ++p) {
                        const std::size_t k = static_cast<std::size_t>(counter_hash(neg_key, epoch, e, p) % n);
                        if (k == i) continue;
                        const double r0 = yi0 - y(k, 0), r1 = yi1 - y(k, 1);
                        const double rd2 = r0 * r0 + r1 * r1;
                        if (rd2 > 0.0) {
                            const double coeff = 2.0 * b / ((0.001 + rd2) * (a * std::pow(rd2, b) + 1.0));
                            g0 += umap_detail::clip4(coeff * r0);
                            g1 += umap_detail::clip4(coeff * r1);
                        }
                    }
                    next_negative[e] += static_cast<double>(n_neg) * per_negative[e];
                }
                grad(i, 0) = g0;
                grad(i, 1) = g1;
            }
        });

        const double lr = params.learning_rate * (1.0 - now / static_cast<double>(params.epochs));
        beta1_t *= beta1;
        beta2_t *= beta2;
        const double step = lr * std::sqrt(1.0 - beta2_t) / (1.0 - beta1_t);
        for (std::size_t t = 0; t < y.data().size(); ++t) {
            const double g = grad.data()[t];
            m1.data()[t] = beta1 * m1.data()[t] + (1.0 - beta1) * g;
            m2.data()[t] = beta2 * m2.data()[t] + (1.0 - beta2) * g * g;
            y.data()[t] += step * m1.data()[t] / (std::sqrt(m2.data()[t]) + adam_eps);
        }
    }
    require_finite(y, "umap output");

    out.coords = std::move(y);
    out.params = {{"reducer", "umap"},
                  {"n_neighbors", std::to_string(params.n_neighbors)},
                  {"min_dist", format_double(params.min_dist)},
                  {"epochs", std::to_string(params.epochs)},
                  {"negative_sample_rate", std::to_string(params.negative_sample_rate)},
                  {"learning_rate", format_double(params.learning_rate)},
                  {"seed", std::to_string(params.seed)},
                  {"metric", to_string(metric.kind)}};
    out.diagnostics["a"] = a;
    out.diagnostics["b"] = b;
    out.diagnostics["edges"] = static_cast<double>(edges);
    out.wall_time = std::chrono::steady_clock::now() - started;
    return out;
}

}  // namespace semortho
