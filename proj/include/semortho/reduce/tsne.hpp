#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "semortho/core/error.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/parallel.hpp"
#include "semortho/core/random.hpp"
#include "semortho/core/text.hpp"
#include "semortho/geometry.hpp"
#include "semortho/reduce/embedding2d.hpp"

namespace semortho {

struct TsneParams {
    double perplexity = 30.0;
    double learning_rate = 100.0;
    std::size_t iterations = 1000;
    double early_exaggeration = 12.0;
    std::size_t early_exaggeration_iters = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::uint64_t seed = 42;

    void validate(std::size_t n) const {
        if (!(perplexity > 0.0)) throw ValidationError("t-SNE perplexity must be positive");
        if (!(3.0 * perplexity < static_cast<double>(n)))
            throw ValidationError("t-SNE perplexity " + format_double(perplexity) + " is infeasible for n=" +
                                  std::to_string(n) + " (needs 3 * perplexity < n)");
        if (!(learning_rate > 0.0)) throw ValidationError("t-SNE learning rate must be positive");
        if (iterations < 1) throw ValidationError("t-SNE iterations must be >= 1");
        if (early_exaggeration_iters > iterations)
            throw ValidationError("t-SNE early exaggeration cannot outlast the run");
    }
};

/// Row-stochastic conditional affinities p_{j|i} (dense, zero diagonal) and the
/// precision beta_i = 1 / (2 sigma_i^2) found for each row.
struct ConditionalAffinities {
    std::size_t n = 0;
    std::vector<double> p;
    std::vector<double> beta;
};

/// Binary search per row on beta so that exp(H_i) (natural-log entropy) equals
/// the target perplexity; `sq_dist` is the n x n matrix of squared distances.
inline ConditionalAffinities calibrate_affinities(const std::vector<double>& sq_dist, std::size_t n,
                                                  double perplexity, unsigned threads = 1) {
    ConditionalAffinities out;
    out.n = n;
    out.p.assign(n * n, 0.0);
    out.beta.assign(n, 1.0);
    const double target = std::log(perplexity);
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> row(n);
        for (std::size_t i = begin; i < end; ++i) {
            const double* d = sq_dist.data() + i * n;
            double dmin = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) dmin = std::min(dmin, d[j]);
            double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
            for (int it = 0; it < 200; ++it) {
                double sum = 0.0, weighted = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) {
                        row[j] = 0.0;
                        continue;
                    }
                    // Shifting by dmin keeps the largest term at exp(0).
                    const double shifted = d[j] - dmin;
                    row[j] = std::exp(-beta * shifted);
                    sum += row[j];
                    weighted += shifted * row[j];
                }
                const double entropy = std::log(sum) + beta * weighted / sum;
                const double diff = entropy - target;
                if (std::abs(diff) < 1e-10) break;
                if (diff > 0.0) {
                    lo = beta;
                    beta = std::isinf(hi) ? beta * 2.0 : (lo + hi) / 2.0;
                } else {
                    hi = beta;
                    beta = (lo + hi) / 2.0;
                }
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = j == i ? 0.0 : std::exp(-beta * (d[j] - dmin));
                sum += row[j];
            }
            for (std::size_t j = 0; j < n; ++j) out.p[i * n + j] = row[j] / sum;
            out.beta[i] = beta;
        }
    });
    return out;
}

/// Squared pairwise distances under the metric.
inline std::vector<double> squared_distances(const RowMatrix& x, const Metric& metric, unsigned threads = 1) {
    const RowMatrix space = metric.to_euclidean_space(x);
    const std::size_t n = space.rows(), d = space.cols();
    std::vector<double> out(n * n, 0.0);
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double* xi = space.row(i).data();
            for (std::size_t j = 0; j < n; ++j) {
                const double* xj = space.row(j).data();
                double ss = 0.0;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = xi[t] - xj[t];
                    ss += diff * diff;
                }
                out[i * n + j] = ss;
            }
        }
    });
    return out;
}

/// Symmetric joint P: (p_{j|i} + p_{i|j}) / 2n, floored at 1e-12 off the diagonal.
inline std::vector<double> joint_probabilities(const ConditionalAffinities& c) {
    const std::size_t n = c.n;
    std::vector<double> p(n * n, 0.0);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) p[i * n + j] = std::max((c.p[i * n + j] + c.p[j * n + i]) / denom, 1e-12);
    return p;
}

/// KL(P || Q) with the Student-t Q induced by layout `y`.
inline double tsne_kl(const std::vector<double>& p, const RowMatrix& y) {
    const std::size_t n = y.rows();
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d0 = y(i, 0) - y(j, 0), d1 = y(i, 1) - y(j, 1);
            z += 1.0 / (1.0 + d0 * d0 + d1 * d1);
        }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d0 = y(i, 0) - y(j, 0), d1 = y(i, 1) - y(j, 1);
            const double q = std::max(1.0 / (1.0 + d0 * d0 + d1 * d1) / z, 1e-300);
            const double pij = p[i * n + j];
            kl += pij * std::log(pij / q);
        }
    return kl;
}

/// Exact t-SNE to two dimensions: gradient descent on KL(P || Q) with momentum,
/// per-coordinate gains, and early exaggeration. Diagnostics record the KL at
/// initialization, at the end of early exaggeration, and at the final iterate.
inline Embedding2D tsne_fit(const RowMatrix& x, const std::vector<std::string>& row_ids, const TsneParams& params,
                            const Metric& metric, unsigned threads = 1) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t n = x.rows();
    params.validate(n);
    require_finite(x, "t-SNE input");
    if (row_ids.size() != n) throw ValidationError("t-SNE: row id count does not match matrix rows");

    Embedding2D out;
    out.row_ids = row_ids;
    if (params.perplexity < 5.0 || params.perplexity > 50.0)
        out.warnings.push_back("perplexity " + format_double(params.perplexity) + " is outside the usual 5-50 range");

    const auto cond = calibrate_affinities(squared_distances(x, metric, threads), n, params.perplexity, threads);
    const std::vector<double> p = joint_probabilities(cond);

    RowMatrix y(n, 2);
    Rng rng(derive_seed(params.seed, "tsne-init"));
    for (double& v : y.data()) v = rng.normal(0.0, 1e-4);
    out.diagnostics["kl_initial"] = tsne_kl(p, y);

    RowMatrix update(n, 2), gains(n, 2, 1.0), grad(n, 2);
    std::vector<double> num(n * n, 0.0);
    std::vector<double> row_z(n, 0.0);
    for (std::size_t iter = 0; iter < params.iterations; ++iter) {
        const bool exaggerating = iter < params.early_exaggeration_iters;
        const double exaggeration = exaggerating ? params.early_exaggeration : 1.0;
        const double momentum = exaggerating ? params.initial_momentum : params.final_momentum;

        parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                double zi = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) {
                        num[i * n + j] = 0.0;
                        continue;
                    }
                    const double d0 = y(i, 0) - y(j, 0), d1 = y(i, 1) - y(j, 1);
                    const double q = 1.0 / (1.0 + d0 * d0 + d1 * d1);
                    num[i * n + j] = q;
                    zi += q;
                }
                row_z[i] = zi;
            }
        });
        double z = 0.0;
        for (double v : row_z) z += v;

        parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                double g0 = 0.0, g1 = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double q = num[i * n + j];
                    const double mult = (exaggeration * p[i * n + j] - q / z) * q;
                    g0 += mult * (y(i, 0) - y(j, 0));
                    g1 += mult * (y(i, 1) - y(j, 1));
                }
                grad(i, 0) = 4.0 * g0;
                grad(i, 1) = 4.0 * g1;
            }
        });

        for (std::size_t t = 0; t < y.data().size(); ++t) {
            double& gain = gains.data()[t];
            double& upd = update.data()[t];
            const double g = grad.data()[t];
            gain = (upd * g < 0.0) ? gain + 0.2 : gain * 0.8;
            gain = std::max(gain, 0.01);
            upd = momentum * upd - params.learning_rate * gain * g;
            y.data()[t] += upd;
        }
        double c0 = 0.0, c1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            c0 += y(i, 0);
            c1 += y(i, 1);
        }
        c0 /= static_cast<double>(n);
        c1 /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y(i, 0) -= c0;
            y(i, 1) -= c1;
        }
        if (iter + 1 == params.early_exaggeration_iters) out.diagnostics["kl_after_exaggeration"] = tsne_kl(p, y);
    }
    require_finite(y, "t-SNE output");
    out.diagnostics["kl_final"] = tsne_kl(p, y);

    out.coords = std::move(y);
    out.params = {{"reducer", "tsne"},
                  {"perplexity", format_double(params.perplexity)},
                  {"learning_rate", format_double(params.learning_rate)},
                  {"iterations", std::to_string(params.iterations)},
                  {"early_exaggeration", format_double(params.early_exaggeration)},
                  {"early_exaggeration_iters", std::to_string(params.early_exaggeration_iters)},
                  {"seed", std::to_string(params.seed)},
                  {"metric", to_string(metric.kind)}};
    out.wall_time = std::chrono::steady_clock::now() - started;
    return out;
}

}  // namespace semortho
