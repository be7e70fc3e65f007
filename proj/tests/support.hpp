#pragma once

// Test fixtures and brute-force oracles. Nothing here calls into the library
// code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "semortho/core/matrix.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("semortho-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

inline void write(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    f << content;
}

inline std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline semortho::RowMatrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, scale);
    semortho::RowMatrix m(n, d);
    for (double& v : m.data()) v = nd(gen);
    return m;
}

struct Blobs {
    semortho::RowMatrix x;
    std::vector<std::size_t> labels;
};

/// `k` isotropic Gaussian blobs (unit sigma) in `dim` dimensions with centers at
/// (sep / sqrt 2) * e_i, so every pair of centers is `sep` apart.
inline Blobs orthogonal_blobs(std::size_t k, std::size_t per_blob, std::size_t dim, double sep, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Blobs b;
    b.x = semortho::RowMatrix(k * per_blob, dim);
    const double offset = sep / std::sqrt(2.0);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < per_blob; ++i) {
            const std::size_t row = c * per_blob + i;
            for (std::size_t d = 0; d < dim; ++d) b.x(row, d) = nd(gen) + (d == c ? offset : 0.0);
            b.labels.push_back(c);
        }
    return b;
}

// ---------------------------------------------------------------------------
// Oracles

inline double z_oracle(double p) { return boost::math::quantile(boost::math::normal(0.0, 1.0), p); }

/// Per-cluster n for a two-sample comparison: 2 (z_a + z_b)^2 / d^2.
inline double sample_size_oracle(double d, double alpha, double power, bool two_tailed) {
    const double za = z_oracle(1.0 - (two_tailed ? alpha / 2.0 : alpha));
    const double zb = z_oracle(power);
    return 2.0 * (za + zb) * (za + zb) / (d * d);
}

/// Linear-interpolation quantile computed from the definition.
inline double quantile_oracle(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const double fl = std::floor(h);
    const std::size_t i = static_cast<std::size_t>(fl);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + (h - fl) * (v[i + 1] - v[i]);
}

/// Indices kept by the IQR rule (inclusive fences).
inline std::vector<std::size_t> iqr_keep_oracle(const std::vector<double>& v) {
    const double q1 = quantile_oracle(v, 0.25), q3 = quantile_oracle(v, 0.75);
    const double lo = q1 - 1.5 * (q3 - q1), hi = q3 + 1.5 * (q3 - q1);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] >= lo && v[i] <= hi) keep.push_back(i);
    return keep;
}

/// Indices kept by the z-score rule: |x - mu| <= 3 sigma (population sigma).
inline std::vector<std::size_t> z_keep_oracle(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += x;
    const long double mu = s / v.size();
    long double ss = 0;
    for (double x : v) ss += (x - mu) * (x - mu);
    const long double sigma = std::sqrt(ss / v.size());
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] >= static_cast<double>(mu - 3 * sigma) && v[i] <= static_cast<double>(mu + 3 * sigma)) keep.push_back(i);
    return keep;
}

inline double sq_euclid(const semortho::RowMatrix& m, std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t d = 0; d < m.cols(); ++d) s += (m(i, d) - m(j, d)) * (m(i, d) - m(j, d));
    return s;
}

/// Sample covariance (divisor n-1) by two passes.
inline Eigen::MatrixXd covariance_oracle(const semortho::RowMatrix& m) {
    const std::size_t n = m.rows(), d = m.cols();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mu(c) += m(i, c);
    mu /= static_cast<double>(n);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) s(a, b) += (m(i, a) - mu(a)) * (m(i, b) - mu(b));
    return s / static_cast<double>(n - 1);
}

/// Squared distance matrix under (x-y)^T S^-1 (x-y); identity when `inv` is empty.
inline std::vector<double> distance_oracle(const semortho::RowMatrix& m, const Eigen::MatrixXd* inv = nullptr) {
    const std::size_t n = m.rows(), d = m.cols();
    std::vector<double> out(n * n);
    Eigen::VectorXd diff(d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < d; ++c) diff(c) = m(i, c) - m(j, c);
            out[i * n + j] = inv ? diff.dot(*inv * diff) : diff.squaredNorm();
        }
    return out;
}

/// k nearest neighbors per row by full sort on (distance, index).
inline std::vector<std::vector<std::size_t>> knn_oracle(const std::vector<double>& dist, std::size_t n, std::size_t k) {
    std::vector<std::vector<std::size_t>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) all.emplace_back(dist[i * n + j], j);
        std::sort(all.begin(), all.end());
        for (std::size_t t = 0; t < k; ++t) out[i].push_back(all[t].second);
    }
    return out;
}

/// Silhouette from the definition; singleton clusters score 0.
inline std::vector<double> silhouette_oracle(const semortho::RowMatrix& m, const std::vector<std::size_t>& labels) {
    const std::size_t n = m.rows();
    std::size_t k = 0;
    for (auto l : labels) k = std::max(k, l + 1);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            sum[labels[j]] += std::sqrt(sq_euclid(m, i, j));
            ++cnt[labels[j]];
        }
        if (cnt[labels[i]] == 0) continue;
        const double a = sum[labels[i]] / static_cast<double>(cnt[labels[i]]);
        double b = INFINITY;
        for (std::size_t c = 0; c < k; ++c)
            if (c != labels[i] && cnt[c] > 0) b = std::min(b, sum[c] / static_cast<double>(cnt[c]));
        if (!std::isfinite(b)) continue;
        out[i] = (b - a) / std::max(a, b);
    }
    return out;
}

/// Trustworthiness by explicit rank tables.
inline double trustworthiness_oracle(const semortho::RowMatrix& hi, const semortho::RowMatrix& lo, std::size_t k) {
    const std::size_t n = hi.rows();
    const auto dh = distance_oracle(hi), dl = distance_oracle(lo);
    const auto low_nn = knn_oracle(dl, n, k);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order.emplace_back(dh[i * n + j], j);
        std::sort(order.begin(), order.end());
        std::vector<std::size_t> rank(n, 0);
        for (std::size_t r = 0; r < order.size(); ++r) rank[order[r].second] = r + 1;
        for (std::size_t j : low_nn[i])
            if (rank[j] > k) total += static_cast<double>(rank[j] - k);
    }
    const double nd = n, kd = k;
    return 1.0 - 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0)) * total;
}

/// Fraction of points whose 10 nearest 2D neighbors share their label.
inline double knn_purity(const semortho::RowMatrix& coords, const std::vector<std::size_t>& labels, std::size_t k = 10) {
    const std::size_t n = coords.rows();
    const auto d = distance_oracle(coords);
    const auto nn = knn_oracle(d, n, k);
    double same = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : nn[i]) same += labels[j] == labels[i];
    return same / static_cast<double>(n * k);
}

}  // namespace testsupport
