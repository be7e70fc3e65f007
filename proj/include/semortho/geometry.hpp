#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semortho/core/error.hpp"
#include "semortho/core/matrix.hpp"
#include "semortho/core/parallel.hpp"

namespace semortho {

inline double euclidean(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw ValidationError("dimension mismatch: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        ss += d * d;
    }
    return std::sqrt(ss);
}

/// Sample covariance (divisor n-1) with a ridge-regularized inverse.
/// `whitener` is L^{-1} for the Cholesky factor L L^T = sigma + ridge I, so the
/// Mahalanobis distance equals the Euclidean distance between whitened rows.
struct CovarianceModel {
    std::size_t dim = 0;
    Eigen::MatrixXd sigma;
    Eigen::MatrixXd sigma_inv;
    Eigen::MatrixXd whitener;
    double ridge = 0.0;
};

/// Default ridge: 1e-6 * trace(sigma) / dim.
inline CovarianceModel fit_covariance(const RowMatrix& m, std::optional<double> ridge = std::nullopt) {
    const std::size_t n = m.rows();
    const std::size_t d = m.cols();
    if (n < 2) throw ValidationError("covariance needs at least 2 rows");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
        m.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mu;
    CovarianceModel model;
    model.dim = d;
    model.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
    // Symmetrize away rounding asymmetry from the product.
    model.sigma = 0.5 * (model.sigma + model.sigma.transpose()).eval();
    model.ridge = ridge.value_or(1e-6 * model.sigma.trace() / static_cast<double>(d));
    if (model.ridge < 0.0) throw ValidationError("covariance ridge must be nonnegative");

    const Eigen::MatrixXd reg =
        model.sigma + model.ridge * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() != Eigen::Success)
        throw NumericalError("covariance is not positive definite (ridge " + std::to_string(model.ridge) +
                             "); data is degenerate");
    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    const Eigen::MatrixXd lower = llt.matrixL();
    model.whitener = lower.triangularView<Eigen::Lower>().solve(identity);
    model.sigma_inv = llt.solve(identity);
    model.sigma_inv = 0.5 * (model.sigma_inv + model.sigma_inv.transpose()).eval();
    if (!model.sigma_inv.allFinite()) throw NumericalError("covariance inverse is not finite");
    return model;
}

/// sqrt((x-y)^T sigma_inv (x-y)) with the regularized inverse.
inline double mahalanobis(std::span<const double> x, std::span<const double> y, const CovarianceModel& model) {
    if (x.size() != model.dim || y.size() != model.dim)
        throw ValidationError("dimension mismatch with covariance model (dim " + std::to_string(model.dim) + ")");
    Eigen::VectorXd diff(static_cast<Eigen::Index>(model.dim));
    for (std::size_t i = 0; i < model.dim; ++i) diff(static_cast<Eigen::Index>(i)) = x[i] - y[i];
    const double q = diff.dot(model.sigma_inv * diff);
    return std::sqrt(std::max(0.0, q));
}

/// Rows mapped through the whitener: z = L^{-1} x.
inline RowMatrix whiten(const RowMatrix& m, const CovarianceModel& model) {
    if (m.cols() != model.dim) throw ValidationError("dimension mismatch with covariance model");
    RowMatrix out(m.rows(), m.cols());
    const auto d = static_cast<Eigen::Index>(m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        Eigen::Map<const Eigen::VectorXd> x(m.row(i).data(), d);
        Eigen::Map<Eigen::VectorXd> z(out.row(i).data(), d);
        z.noalias() = model.whitener * x;
    }
    return out;
}

/// Inverse of whiten: x = L z.
inline RowMatrix unwhiten(const RowMatrix& m, const CovarianceModel& model) {
    const Eigen::MatrixXd lower = model.whitener.triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd::Identity(model.whitener.rows(), model.whitener.cols()));
    RowMatrix out(m.rows(), m.cols());
    const auto d = static_cast<Eigen::Index>(m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        Eigen::Map<const Eigen::VectorXd> z(m.row(i).data(), d);
        Eigen::Map<Eigen::VectorXd> x(out.row(i).data(), d);
        x.noalias() = lower * z;
    }
    return out;
}

enum class MetricKind { euclidean, mahalanobis };

inline std::string to_string(MetricKind k) { return k == MetricKind::euclidean ? "euclidean" : "mahalanobis"; }

inline MetricKind parse_metric(const std::string& s) {
    if (s == "euclidean") return MetricKind::euclidean;
    if (s == "mahalanobis") return MetricKind::mahalanobis;
    throw ValidationError("unknown metric '" + s + "' (expected euclidean|mahalanobis)");
}

/// A metric bound to data: Euclidean, or Mahalanobis with its fitted covariance.
struct Metric {
    MetricKind kind = MetricKind::euclidean;
    std::optional<CovarianceModel> covariance;

    static Metric euclidean_metric() { return {}; }
    static Metric mahalanobis_metric(CovarianceModel model) { return {MetricKind::mahalanobis, std::move(model)}; }

    /// Fits whatever the metric needs from `m` (the covariance for Mahalanobis).
    static Metric fit(MetricKind kind, const RowMatrix& m, std::optional<double> ridge = std::nullopt) {
        if (kind == MetricKind::euclidean) return euclidean_metric();
        return mahalanobis_metric(fit_covariance(m, ridge));
    }

    double distance(std::span<const double> x, std::span<const double> y) const {
        if (kind == MetricKind::euclidean) return semortho::euclidean(x, y);
        return mahalanobis(x, y, *covariance);
    }

    /// Coordinates in which this metric is plain Euclidean distance.
    RowMatrix to_euclidean_space(const RowMatrix& m) const {
        if (kind == MetricKind::euclidean) return m;
        return whiten(m, *covariance);
    }
};

struct NeighborGraph {
    std::size_t k = 0;
    std::vector<std::size_t> indices;  // n x k, row-major
    std::vector<double> distances;     // n x k, ascending per row

    std::size_t rows() const noexcept { return k == 0 ? 0 : indices.size() / k; }
    std::span<const std::size_t> neighbors(std::size_t i) const { return {indices.data() + i * k, k}; }
    std::span<const double> neighbor_distances(std::size_t i) const { return {distances.data() + i * k, k}; }
};

/// Exact kNN by full scan in metric-Euclidean space; ties go to the lower row index.
inline NeighborGraph knn_graph(const RowMatrix& m, std::size_t k, const Metric& metric, unsigned threads = 1) {
    const std::size_t n = m.rows();
    if (k == 0 || k >= n)
        throw ValidationError("knn requires 1 <= k < n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    const RowMatrix space = metric.to_euclidean_space(m);
    const std::size_t d = space.cols();
    NeighborGraph g;
    g.k = k;
    g.indices.resize(n * k);
    g.distances.resize(n * k);
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<std::pair<double, std::size_t>> cand(n - 1);
        for (std::size_t i = begin; i < end; ++i) {
            const double* xi = space.row(i).data();
            std::size_t c = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double* xj = space.row(j).data();
                double ss = 0.0;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = xi[t] - xj[t];
                    ss += diff * diff;
                }
                cand[c++] = {ss, j};
            }
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
            for (std::size_t t = 0; t < k; ++t) {
                g.indices[i * k + t] = cand[t].second;
                g.distances[i * k + t] = std::sqrt(cand[t].first);
            }
        }
    });
    return g;
}

}  // namespace semortho
