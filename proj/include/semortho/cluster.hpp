#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semortho/core/error.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/parallel.hpp"
#include "semortho/core/random.hpp"
#include "semortho/geometry.hpp"
#include "semortho/stats.hpp"

namespace semortho {

struct KMeansModel {
    std::size_t k = 0;
    RowMatrix centroids;                  // k x dim, in the caller's coordinates
    std::vector<std::size_t> assignments;
    double inertia = 0.0;                 // sum of squared metric distances to own centroid
    std::size_t iterations_run = 0;
    std::uint64_t seed = 0;
    std::vector<double> inertia_trace;    // per Lloyd iteration of the winning restart
};

struct KMeansOptions {
    std::size_t restarts = 4;
    std::size_t max_iterations = 300;
};

namespace kmeans_detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
    double ss = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
        const double diff = a[t] - b[t];
        ss += diff * diff;
    }
    return ss;
}

/// Greedy k-means++: each new center is the best of 2 + ln(k) D^2-weighted
/// candidates by resulting potential.
inline RowMatrix seed_plus_plus(const RowMatrix& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows(), d = x.cols();
    RowMatrix centers(k, d);
    auto set_center = [&](std::size_t c, std::size_t i) {
        std::copy(x.row(i).begin(), x.row(i).end(), centers.row(c).begin());
    };
    std::size_t first = static_cast<std::size_t>(rng.below(n));
    set_center(0, first);
    std::vector<double> closest(n);
    for (std::size_t i = 0; i < n; ++i) closest[i] = sq_dist(x.row(i).data(), x.row(first).data(), d);
    const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
    std::vector<double> candidate_closest(n), best_closest(n);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : closest) total += v;
        double best_potential = std::numeric_limits<double>::infinity();
        std::size_t best = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            std::size_t cand = n - 1;
            if (total > 0.0) {
                const double r = rng.uniform() * total;
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += closest[i];
                    if (acc > r) {
                        cand = i;
                        break;
                    }
                }
            } else {
                cand = static_cast<std::size_t>(rng.below(n));
            }
            double potential = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                candidate_closest[i] = std::min(closest[i], sq_dist(x.row(i).data(), x.row(cand).data(), d));
                potential += candidate_closest[i];
            }
            if (potential < best_potential) {
                best_potential = potential;
                best = cand;
                best_closest.swap(candidate_closest);
            }
        }
        set_center(c, best);
        closest.swap(best_closest);
        best_closest.resize(n);
    }
    return centers;
}

/// Lloyd iterations from the given centers. Empty clusters take the point
/// farthest from its current centroid. Converges when assignments repeat.
inline KMeansModel lloyd(const RowMatrix& x, RowMatrix centers, std::size_t max_iterations) {
    const std::size_t n = x.rows(), d = x.cols(), k = centers.rows();
    KMeansModel m;
    m.k = k;
    std::vector<std::size_t> assign(n, k);
    std::vector<double> dist(n);
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dc = sq_dist(x.row(i).data(), centers.row(c).data(), d);
                if (dc < best_d) {
                    best_d = dc;
                    best = c;
                }
            }
            if (assign[i] != best) changed = true;
            assign[i] = best;
            dist[i] = best_d;
        }
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) ++counts[assign[i]];
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i)
                if (counts[assign[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
            if (far == n) break;  // fewer distinct points than clusters
            --counts[assign[far]];
            assign[far] = c;
            counts[c] = 1;
            dist[far] = 0.0;
            std::copy(x.row(far).begin(), x.row(far).end(), centers.row(c).begin());
            changed = true;
        }
        double inertia = 0.0;
        for (double v : dist) inertia += v;
        m.inertia_trace.push_back(inertia);
        m.iterations_run = iter + 1;
        if (!changed && iter > 0) break;

        RowMatrix sums(k, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < d; ++t) sums(assign[i], t) += x(i, t);
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (std::size_t t = 0; t < d; ++t) centers(c, t) = sums(c, t) / static_cast<double>(counts[c]);
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += sq_dist(x.row(i).data(), centers.row(assign[i]).data(), d);
    if (inertia < m.inertia_trace.back()) m.inertia_trace.push_back(inertia);
    m.inertia = inertia;
    m.assignments = std::move(assign);
    m.centroids = std::move(centers);
    return m;
}

/// Best of `restarts` seeded runs plus optional warm starts, in metric-Euclidean space.
inline KMeansModel fit_in_space(const RowMatrix& space, std::size_t k, std::uint64_t seed, const KMeansOptions& opt,
                                const std::vector<RowMatrix>& warm_starts = {}) {
    std::optional<KMeansModel> best;
    auto consider = [&](KMeansModel m) {
        if (!best || m.inertia < best->inertia) best = std::move(m);
    };
    for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.restarts); ++r) {
        Rng rng(derive_seed(seed, r));
        consider(lloyd(space, seed_plus_plus(space, k, rng), opt.max_iterations));
    }
    for (const auto& w : warm_starts) consider(lloyd(space, w, opt.max_iterations));
    best->seed = seed;
    return std::move(*best);
}

}  // namespace kmeans_detail

/// k-means under `metric`. Mahalanobis runs as Euclidean k-means on whitened
/// points (the mean stays the optimal center), with centroids mapped back.
inline KMeansModel kmeans_fit(const RowMatrix& points, std::size_t k, const Metric& metric, std::uint64_t seed,
                              const KMeansOptions& opt = {}) {
    const std::size_t n = points.rows();
    if (k < 1 || k > n)
        throw ValidationError("k-means requires 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    for (double v : points.data())
        if (!std::isfinite(v)) throw ValidationError("k-means input contains non-finite values");
    const RowMatrix space = metric.to_euclidean_space(points);
    KMeansModel m = kmeans_detail::fit_in_space(space, k, seed, opt);
    if (metric.kind == MetricKind::mahalanobis) m.centroids = unwhiten(m.centroids, *metric.covariance);
    return m;
}

// ---------------------------------------------------------------------------
// Silhouette

struct SilhouetteReport {
    std::vector<double> per_point;
    double mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t bootstrap_samples = 0;
};

namespace silhouette_detail {

/// Maps arbitrary labels to 0..m-1; returns m.
inline std::size_t compress_labels(const std::vector<std::size_t>& assignments, std::vector<std::size_t>& out) {
    std::map<std::size_t, std::size_t> ids;
    for (std::size_t a : assignments) ids.emplace(a, 0);
    std::size_t next = 0;
    for (auto& [label, id] : ids) id = next++;
    out.resize(assignments.size());
    for (std::size_t i = 0; i < assignments.size(); ++i) out[i] = ids.at(assignments[i]);
    return ids.size();
}

inline double score(double a, double b) {
    const double m = std::max(a, b);
    return m > 0.0 ? (b - a) / m : 0.0;
}

}  // namespace silhouette_detail

/// Per-point (b - a) / max(a, b); singleton clusters score exactly 0.
inline SilhouetteReport silhouette(const RowMatrix& points, const std::vector<std::size_t>& assignments,
                                   const Metric& metric, unsigned threads = 1) {
    const std::size_t n = points.rows();
    if (assignments.size() != n) throw ValidationError("silhouette: every point needs an assignment");
    std::vector<std::size_t> labels;
    const std::size_t m = silhouette_detail::compress_labels(assignments, labels);
    if (m < 2) throw ValidationError("silhouette needs at least 2 distinct clusters");
    const RowMatrix space = metric.to_euclidean_space(points);
    const std::size_t d = space.cols();
    std::vector<std::size_t> sizes(m, 0);
    for (std::size_t l : labels) ++sizes[l];

    SilhouetteReport rep;
    rep.per_point.assign(n, 0.0);
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> sums(m);
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t own = labels[i];
            if (sizes[own] == 1) {
                rep.per_point[i] = 0.0;
                continue;
            }
            std::fill(sums.begin(), sums.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j)
                sums[labels[j]] += std::sqrt(kmeans_detail::sq_dist(space.row(i).data(), space.row(j).data(), d));
            const double a = sums[own] / static_cast<double>(sizes[own] - 1);
            double b = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < m; ++c)
                if (c != own) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
            rep.per_point[i] = silhouette_detail::score(a, b);
        }
    });
    double total = 0.0;
    for (double s : rep.per_point) total += s;
    rep.mean = total / static_cast<double>(n);
    return rep;
}

struct BootstrapInterval {
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::vector<double> resample_means;
};

/// Percentile (2.5, 97.5) interval of the mean silhouette recomputed on
/// with-replacement resamples of the points. A resample that loses a cluster
/// is redrawn, up to `max_redraws` times.
inline BootstrapInterval bootstrap_silhouette(const RowMatrix& points, const std::vector<std::size_t>& assignments,
                                              const Metric& metric, std::size_t samples, std::uint64_t seed,
                                              unsigned threads = 1, std::size_t max_redraws = 100) {
    const std::size_t n = points.rows();
    if (assignments.size() != n) throw ValidationError("bootstrap: every point needs an assignment");
    if (samples < 100) throw ValidationError("bootstrap needs at least 100 resamples");
    std::vector<std::size_t> labels;
    const std::size_t m = silhouette_detail::compress_labels(assignments, labels);
    if (m < 2) throw ValidationError("silhouette needs at least 2 distinct clusters");
    const RowMatrix space = metric.to_euclidean_space(points);
    const std::size_t d = space.cols();

    BootstrapInterval out;
    out.resample_means.assign(samples, 0.0);
    parallel_for(samples, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> counts(n);
        std::vector<std::size_t> present;
        std::vector<std::size_t> totals(m);
        std::vector<double> sums;
        for (std::size_t s = begin; s < end; ++s) {
            Rng rng(derive_seed(seed, s));
            bool complete = false;
            for (std::size_t attempt = 0; attempt <= max_redraws && !complete; ++attempt) {
                std::fill(counts.begin(), counts.end(), 0);
                std::fill(totals.begin(), totals.end(), 0);
                for (std::size_t t = 0; t < n; ++t) ++counts[rng.below(n)];
                for (std::size_t i = 0; i < n; ++i) totals[labels[i]] += counts[i];
                complete = std::all_of(totals.begin(), totals.end(), [](std::size_t c) { return c > 0; });
            }
            if (!complete)
                throw NumericalError("bootstrap: resamples keep losing a cluster (clusters too small)");
            present.clear();
            for (std::size_t i = 0; i < n; ++i)
                if (counts[i] > 0) present.push_back(i);
            const std::size_t u = present.size();
            sums.assign(u * m, 0.0);
            for (std::size_t p = 0; p < u; ++p) {
                const std::size_t i = present[p];
                const double* xi = space.row(i).data();
                for (std::size_t q = p + 1; q < u; ++q) {
                    const std::size_t j = present[q];
                    const double dist = std::sqrt(kmeans_detail::sq_dist(xi, space.row(j).data(), d));
                    sums[p * m + labels[j]] += static_cast<double>(counts[j]) * dist;
                    sums[q * m + labels[i]] += static_cast<double>(counts[i]) * dist;
                }
            }
            double total = 0.0;
            for (std::size_t p = 0; p < u; ++p) {
                const std::size_t i = present[p];
                const std::size_t own = labels[i];
                if (totals[own] <= 1) continue;  // singleton in the resample scores 0
                const double a = sums[p * m + own] / static_cast<double>(totals[own] - 1);
                double b = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < m; ++c)
                    if (c != own) b = std::min(b, sums[p * m + c] / static_cast<double>(totals[c]));
                total += static_cast<double>(counts[i]) * silhouette_detail::score(a, b);
            }
            out.resample_means[s] = total / static_cast<double>(n);
        }
    });
    std::vector<double> sorted = out.resample_means;
    std::sort(sorted.begin(), sorted.end());
    out.ci_low = stats::quantile_sorted(sorted, 0.025);
    out.ci_high = stats::quantile_sorted(sorted, 0.975);
    return out;
}

// ---------------------------------------------------------------------------
// k selection

struct ElbowCurve {
    std::vector<std::size_t> ks;
    std::vector<double> inertias;
    std::vector<double> deltas;  // (W_k - W_prev) / (k - k_prev), for ks[1..]
    double mean_delta = 0.0;
    std::size_t k_opt = 0;
};

/// k_opt = argmin over ks[1..] of |dW_k/dk - mean slope|; ties go to the smaller k.
inline ElbowCurve elbow_select(const std::vector<std::size_t>& ks, const std::vector<double>& inertias) {
    if (ks.size() != inertias.size()) throw ValidationError("elbow: ks and inertias differ in length");
    if (ks.size() < 3) throw ValidationError("elbow needs at least 3 k values");
    for (std::size_t i = 1; i < ks.size(); ++i)
        if (ks[i] <= ks[i - 1]) throw ValidationError("elbow: ks must be strictly ascending");
    ElbowCurve e{ks, inertias, {}, 0.0, 0};
    for (std::size_t i = 1; i < ks.size(); ++i)
        e.deltas.push_back((inertias[i] - inertias[i - 1]) / static_cast<double>(ks[i] - ks[i - 1]));
    double sum = 0.0;
    for (double v : e.deltas) sum += v;
    e.mean_delta = sum / static_cast<double>(e.deltas.size());
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < e.deltas.size(); ++i) {
        const double dev = std::abs(e.deltas[i] - e.mean_delta);
        if (dev < best) {
            best = dev;
            e.k_opt = ks[i + 1];
        }
    }
    return e;
}

struct KDiagnostic {
    std::size_t k = 0;
    double inertia = 0.0;
    double silhouette = 0.0;
    std::optional<std::pair<double, double>> ci;
};

struct KSelection {
    std::size_t k_silhouette = 0;
    std::size_t k_elbow = 0;
    bool agree = false;  // |k_silhouette - k_elbow| <= 1
    std::vector<KDiagnostic> diagnostics;
    ElbowCurve elbow;
    std::vector<KMeansModel> models;  // one per k, aligned with diagnostics
};

struct SelectKOptions {
    std::size_t k_min = 2;
    std::size_t k_max = 15;
    KMeansOptions kmeans;
    std::size_t bootstrap_samples = 0;  // 0 skips per-k intervals
    unsigned threads = 1;
};

/// Fits k = k_min..k_max. Each k also starts from the best (k-1)-solution plus
/// the point farthest from its centroid, which keeps W_k nonincreasing in k.
inline KSelection select_k(const RowMatrix& points, const Metric& metric, std::uint64_t seed,
                           const SelectKOptions& opt = {}) {
    const std::size_t n = points.rows();
    if (opt.k_min < 2 || opt.k_max > n || opt.k_min > opt.k_max)
        throw ValidationError("k range must lie within [2, n] and be ascending");
    if (opt.k_max - opt.k_min + 1 < 3) throw ValidationError("k range must span at least 3 values for the elbow");
    const RowMatrix space = metric.to_euclidean_space(points);
    const std::size_t d = space.cols();

    KSelection sel;
    std::optional<KMeansModel> prev;
    for (std::size_t k = opt.k_min; k <= opt.k_max; ++k) {
        std::vector<RowMatrix> warm;
        if (prev) {
            RowMatrix w(k, d);
            std::copy(prev->centroids.data().begin(), prev->centroids.data().end(), w.data().begin());
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double di =
                    kmeans_detail::sq_dist(space.row(i).data(), prev->centroids.row(prev->assignments[i]).data(), d);
                if (di > far_d) {
                    far_d = di;
                    far = i;
                }
            }
            std::copy(space.row(far).begin(), space.row(far).end(), w.row(k - 1).begin());
            warm.push_back(std::move(w));
        }
        KMeansModel m = kmeans_detail::fit_in_space(space, k, derive_seed(seed, k), opt.kmeans, warm);
        prev = m;
        KDiagnostic diag;
        diag.k = k;
        diag.inertia = m.inertia;
        diag.silhouette = silhouette(space, m.assignments, Metric{}, opt.threads).mean;
        if (opt.bootstrap_samples > 0) {
            const auto bi = bootstrap_silhouette(space, m.assignments, Metric{}, opt.bootstrap_samples,
                                                 derive_seed(seed, "bootstrap-k" + std::to_string(k)), opt.threads);
            diag.ci = std::make_pair(bi.ci_low, bi.ci_high);
        }
        if (metric.kind == MetricKind::mahalanobis) m.centroids = unwhiten(m.centroids, *metric.covariance);
        sel.models.push_back(std::move(m));
        sel.diagnostics.push_back(diag);
    }
    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> ks;
    std::vector<double> ws;
    for (const auto& dg : sel.diagnostics) {
        if (dg.silhouette > best) {
            best = dg.silhouette;
            sel.k_silhouette = dg.k;
        }
        ks.push_back(dg.k);
        ws.push_back(dg.inertia);
    }
    sel.elbow = elbow_select(ks, ws);
    sel.k_elbow = sel.elbow.k_opt;
    const auto gap = sel.k_silhouette > sel.k_elbow ? sel.k_silhouette - sel.k_elbow : sel.k_elbow - sel.k_silhouette;
    sel.agree = gap <= 1;
    return sel;
}

}  // namespace semortho
