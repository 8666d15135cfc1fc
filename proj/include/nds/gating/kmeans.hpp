#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nds/core/matrix.hpp"

namespace nds::gating {

struct KMeansOptions {
    std::size_t k = 1;
    std::uint64_t seed = 0;
    std::size_t max_iters = 100;
    double tol = 1e-6;  // stop once no centroid moves further than this
    std::size_t restarts = 10;  // independent seedings; the lowest final WCSS wins (earliest on ties)
};

struct KMeansResult {
    std::vector<std::size_t> labels;
    Matrix centroids;  // k x d, each the mean of its cluster
    // Within-cluster sum of squares after each centroid update of the kept run.
    std::vector<double> wcss_history;
    std::size_t iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding, best of several restarts.
//
// Ties between equidistant centroids go to the lowest index. A cluster that
// ends up empty receives the point farthest from its own centroid (taken from
// a cluster with at least two members), so every cluster keeps size >= 1.
// Throws k_too_large when points.rows() < k.
KMeansResult kmeans(const Matrix& points, const KMeansOptions& options);

double within_cluster_ss(const Matrix& points, const std::vector<std::size_t>& labels, const Matrix& centroids);

}  // namespace nds::gating
