#pragma once

#include "gcmcg/linalg.hpp"

#include <cstdint>
#include <vector>

namespace gcmcg::cluster {

struct ClusterAssignment {
    std::vector<std::size_t> labels; // per input row, cluster index in [0, K)
    std::size_t k = 0;
    std::vector<double> eigenvalues; // ascending Laplacian spectrum
    std::size_t chosen_gap_index = 0;
};

// Pearson correlation between rows; errors on zero-variance rows.
linalg::Mat correlation_matrix(const linalg::Mat& embeddings);

// Subtracts the mean row. Attention smoothing leaves every embedding row
// sharing one dominant component, which saturates row correlations at +1;
// centering the columns first restores the block structure.
linalg::Mat center_columns(const linalg::Mat& embeddings);

// L = D - A with A = max(R, 0), zero diagonal.
linalg::Mat laplacian(const linalg::Mat& correlation);

// K = argmax over i in [k_min, k_max] of eigenvalue gap lambda_{i+1}-lambda_i
// (1-based i), ties toward smaller K.
std::size_t eigengap_select(const std::vector<double>& eigenvalues_ascending,
                            std::size_t k_min, std::size_t k_max);

struct SpectralOptions {
    std::size_t k_min = 2;
    std::size_t k_max = 10; // clamped to C-1
    std::uint64_t seed = 1;
    int kmeans_max_iter = 300;
    int restarts = 50;
    bool normalized_laplacian = false;
};

// Spectral clustering of embedding rows: correlation, Laplacian, eigengap K,
// row-normalized spectral embedding, seeded k-means++.
ClusterAssignment cluster_channels(const linalg::Mat& embeddings, const SpectralOptions& opt);

// Seeded k-means++ on rows; assignments stabilize or error after restarts.
std::vector<std::size_t> kmeans(const linalg::Mat& points, std::size_t k, std::uint64_t seed,
                                int max_iter = 300, int restarts = 50);

// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

} // namespace gcmcg::cluster
