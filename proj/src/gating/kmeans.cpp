#include "nds/gating/kmeans.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "nds/core/random.hpp"
#include "nds/error.hpp"
#include "nds/simd/kernels.hpp"

namespace nds::gating {
namespace {

Matrix seed_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix centroids(k, points.cols());
    std::size_t first = static_cast<std::size_t>(rng() % n);
    std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = simd::squared_distance(points.row(i), centroids.row(0));

    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t chosen = 0;
        if (total > 0.0) {
            const double target = uniform_open01(rng) * total;
            double cumulative = 0.0;
            chosen = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                cumulative += d2[i];
                chosen = i;
                if (cumulative > target) break;
            }
        } else {
            // Every point coincides with a centroid; empty-cluster repair sorts it out.
            chosen = static_cast<std::size_t>(rng() % n);
        }
        std::copy(points.row(chosen).begin(), points.row(chosen).end(), centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], simd::squared_distance(points.row(i), centroids.row(c)));
        }
    }
    return centroids;
}

void assign(const Matrix& points, const Matrix& centroids, std::vector<std::size_t>& labels, std::vector<double>& dist) {
    for (std::size_t i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_c = 0;
        for (std::size_t c = 0; c < centroids.rows(); ++c) {
            const double d = simd::squared_distance(points.row(i), centroids.row(c));
            if (d < best) {
                best = d;
                best_c = c;
            }
        }
        labels[i] = best_c;
        dist[i] = best;
    }
}

void repair_empty(const Matrix& points, Matrix& centroids, std::vector<std::size_t>& labels, std::vector<double>& dist) {
    const std::size_t k = centroids.rows();
    std::vector<std::size_t> counts(k, 0);
    for (auto l : labels) ++counts[l];
    for (std::size_t e = 0; e < k; ++e) {
        if (counts[e] != 0) continue;
        std::size_t donor = points.rows();
        double farthest = -1.0;
        for (std::size_t i = 0; i < points.rows(); ++i) {
            if (counts[labels[i]] >= 2 && dist[i] > farthest) {
                farthest = dist[i];
                donor = i;
            }
        }
        --counts[labels[donor]];
        labels[donor] = e;
        counts[e] = 1;
        dist[donor] = 0.0;
        std::copy(points.row(donor).begin(), points.row(donor).end(), centroids.row(e).begin());
    }
}

// Recomputes centroids as cluster means; returns the largest centroid shift.
double update(const Matrix& points, const std::vector<std::size_t>& labels, Matrix& centroids) {
    Matrix sums(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(centroids.rows(), 0);
    for (std::size_t i = 0; i < points.rows(); ++i) {
        simd::axpy(1.0, points.row(i), sums.row(labels[i]));
        ++counts[labels[i]];
    }
    double movement = 0.0;
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        auto s = sums.row(c);
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (auto& v : s) v *= inv;
        movement = std::max(movement, std::sqrt(simd::squared_distance(s, centroids.row(c))));
        std::copy(s.begin(), s.end(), centroids.row(c).begin());
    }
    return movement;
}

}  // namespace

double within_cluster_ss(const Matrix& points, const std::vector<std::size_t>& labels, const Matrix& centroids) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) total += simd::squared_distance(points.row(i), centroids.row(labels[i]));
    return total;
}

namespace {

KMeansResult lloyd(const Matrix& points, const KMeansOptions& options, Rng& rng) {
    KMeansResult result;
    result.centroids = seed_plus_plus(points, options.k, rng);
    result.labels.assign(points.rows(), 0);
    std::vector<double> dist(points.rows(), 0.0);

    assign(points, result.centroids, result.labels, dist);
    repair_empty(points, result.centroids, result.labels, dist);

    // stale: centroids are not yet the means of the current labels.
    bool stale = true;
    while (result.iterations < options.max_iters) {
        const double movement = update(points, result.labels, result.centroids);
        stale = false;
        ++result.iterations;
        result.wcss_history.push_back(within_cluster_ss(points, result.labels, result.centroids));

        const auto previous = result.labels;
        assign(points, result.centroids, result.labels, dist);
        repair_empty(points, result.centroids, result.labels, dist);
        if (result.labels == previous) break;
        stale = true;
        if (movement < options.tol) break;
    }
    if (stale) {
        update(points, result.labels, result.centroids);
        result.wcss_history.push_back(within_cluster_ss(points, result.labels, result.centroids));
    }
    return result;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, const KMeansOptions& options) {
    if (options.k == 0) throw Error(ErrorCode::validation, "k-means needs k >= 1");
    if (options.restarts == 0) throw Error(ErrorCode::validation, "k-means needs at least one restart");
    if (points.rows() < options.k) {
        throw Error(ErrorCode::k_too_large, fmt::format("k = {} exceeds the {} points available", options.k, points.rows()));
    }
    KMeansResult best;
    for (std::size_t r = 0; r < options.restarts; ++r) {
        Rng rng = make_rng(options.seed, 0x6b6d65616e73ULL + r);
        auto run = lloyd(points, options, rng);
        if (r == 0 || run.wcss_history.back() < best.wcss_history.back()) best = std::move(run);
    }
    return best;
}

}  // namespace nds::gating
