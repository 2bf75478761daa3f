#include "gcmcg/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gcmcg::cluster {

using linalg::Mat;

Mat correlation_matrix(const Mat& embeddings) {
    const std::size_t n = embeddings.rows, d = embeddings.cols;
    std::vector<double> mean(n, 0.0), sd(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[i] += embeddings(i, j);
        mean[i] /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double v = embeddings(i, j) - mean[i];
            sd[i] += v * v;
        }
        if (sd[i] <= 0.0)
            throw error("correlation_matrix: zero variance in row " + std::to_string(i));
        sd[i] = std::sqrt(sd[i]);
    }
    Mat r(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        r(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                acc += (embeddings(i, k) - mean[i]) * (embeddings(j, k) - mean[j]);
            r(i, j) = r(j, i) = acc / (sd[i] * sd[j]);
        }
    }
    return r;
}

Mat center_columns(const Mat& embeddings) {
    Mat out = embeddings;
    for (std::size_t j = 0; j < out.cols; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < out.rows; ++i) mu += out(i, j);
        mu /= static_cast<double>(out.rows);
        for (std::size_t i = 0; i < out.rows; ++i) out(i, j) -= mu;
    }
    return out;
}

Mat laplacian(const Mat& correlation) {
    const std::size_t n = correlation.rows;
    if (correlation.cols != n) throw error("laplacian: matrix not square");
    Mat lap(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double degree = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double a = std::max(0.5 * (correlation(i, j) + correlation(j, i)), 0.0);
            lap(i, j) = -a;
            degree += a;
        }
        lap(i, i) = degree;
    }
    return lap;
}

std::size_t eigengap_select(const std::vector<double>& ev, std::size_t k_min, std::size_t k_max) {
    if (k_min < 2 || k_min > k_max) throw error("eigengap_select: require 2 <= k_min <= k_max");
    if (ev.size() < k_max + 1)
        throw error("eigengap_select: need at least " + std::to_string(k_max + 1) +
                    " eigenvalues, got " + std::to_string(ev.size()));
    std::size_t best = k_min;
    double best_gap = -1.0;
    for (std::size_t i = k_min; i <= k_max; ++i) {
        const double gap = ev[i] - ev[i - 1]; // 1-based i: lambda_{i+1} - lambda_i
        if (gap > best_gap + 1e-15) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

namespace {

double sqdist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc;
}

} // namespace

std::vector<std::size_t> kmeans(const Mat& points, std::size_t k, std::uint64_t seed,
                                int max_iter, int restarts) {
    const std::size_t n = points.rows, d = points.cols;
    if (k == 0 || k > n) throw error("kmeans: invalid cluster count");
    std::mt19937_64 rng(seed);

    for (int attempt = 0; attempt < restarts; ++attempt) {
        // k-means++ seeding
        Mat centers(k, d);
        std::uniform_int_distribution<std::size_t> first(0, n - 1);
        std::size_t c0 = first(rng);
        std::copy(points.row(c0), points.row(c0) + d, centers.row(0));
        std::vector<double> dist(n);
        for (std::size_t c = 1; c < k; ++c) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double best = sqdist(points.row(i), centers.row(0), d);
                for (std::size_t cc = 1; cc < c; ++cc)
                    best = std::min(best, sqdist(points.row(i), centers.row(cc), d));
                dist[i] = best;
                total += best;
            }
            std::size_t pick = 0;
            if (total > 0.0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double target = u(rng), acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += dist[i];
                    if (acc >= target) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = first(rng);
            }
            std::copy(points.row(pick), points.row(pick) + d, centers.row(c));
        }

        std::vector<std::size_t> labels(n, 0), prev(n, k);
        bool empty_cluster = false;
        for (int iter = 0; iter < max_iter; ++iter) {
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t best = 0;
                double bd = sqdist(points.row(i), centers.row(0), d);
                for (std::size_t c = 1; c < k; ++c) {
                    const double dd = sqdist(points.row(i), centers.row(c), d);
                    if (dd < bd) {
                        bd = dd;
                        best = c;
                    }
                }
                labels[i] = best;
            }
            if (labels == prev) break;
            prev = labels;

            std::vector<std::size_t> count(k, 0);
            Mat next(k, d);
            for (std::size_t i = 0; i < n; ++i) {
                ++count[labels[i]];
                for (std::size_t j = 0; j < d; ++j) next(labels[i], j) += points(i, j);
            }
            empty_cluster = false;
            for (std::size_t c = 0; c < k; ++c) {
                if (count[c] == 0) {
                    empty_cluster = true;
                    break;
                }
                for (std::size_t j = 0; j < d; ++j) next(c, j) /= static_cast<double>(count[c]);
            }
            if (empty_cluster) break;
            centers = std::move(next);
        }
        if (!empty_cluster) {
            std::vector<std::size_t> count(k, 0);
            for (std::size_t l : labels) ++count[l];
            if (std::find(count.begin(), count.end(), std::size_t{0}) == count.end())
                return labels;
        }
        // re-seed and try again
    }
    throw error("kmeans: empty cluster persisted across " + std::to_string(restarts) +
                " restarts");
}

ClusterAssignment cluster_channels(const Mat& embeddings, const SpectralOptions& opt) {
    const std::size_t n = embeddings.rows;
    if (n < 2) throw error("cluster_channels: need at least 2 rows");

    ClusterAssignment out;
    if (n == 2) {
        // degenerate size: one channel per cluster
        out.k = 2;
        out.labels = {0, 1};
        out.eigenvalues = {0.0, 0.0};
        out.chosen_gap_index = 2;
        return out;
    }

    Mat lap = laplacian(correlation_matrix(embeddings));
    if (opt.normalized_laplacian) {
        // symmetric normalization D^{-1/2} L D^{-1/2}
        std::vector<double> dinv(n);
        for (std::size_t i = 0; i < n; ++i)
            dinv[i] = lap(i, i) > 0.0 ? 1.0 / std::sqrt(lap(i, i)) : 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) lap(i, j) *= dinv[i] * dinv[j];
    }
    auto eig = linalg::jacobi_eigen(lap);
    out.eigenvalues = eig.values;

    const std::size_t k_max = std::min(opt.k_max, n - 1);
    const std::size_t k_min = std::min(opt.k_min, k_max);
    out.k = eigengap_select(eig.values, k_min, k_max);
    out.chosen_gap_index = out.k;

    // spectral embedding: first K eigenvectors, rows L2-normalized
    Mat u(n, out.k);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < out.k; ++j) {
            u(i, j) = eig.vectors(i, j);
            norm += u(i, j) * u(i, j);
        }
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (std::size_t j = 0; j < out.k; ++j) u(i, j) /= norm;
    }
    out.labels = kmeans(u, out.k, opt.seed, opt.kmeans_max_iter, opt.restarts);
    return out;
}

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.size() != b.size()) throw error("adjusted_rand_index: size mismatch");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    const std::size_t ka = 1 + *std::max_element(a.begin(), a.end());
    const std::size_t kb = 1 + *std::max_element(b.begin(), b.end());
    std::vector<std::vector<std::size_t>> table(ka, std::vector<std::size_t>(kb, 0));
    std::vector<std::size_t> ra(ka, 0), rb(kb, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++table[a[i]][b[i]];
        ++ra[a[i]];
        ++rb[b[i]];
    }
    auto choose2 = [](std::size_t m) { return 0.5 * static_cast<double>(m) * (m - 1); };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (std::size_t i = 0; i < ka; ++i)
        for (std::size_t j = 0; j < kb; ++j) sum_ij += choose2(table[i][j]);
    for (std::size_t m : ra) sum_a += choose2(m);
    for (std::size_t m : rb) sum_b += choose2(m);
    const double total = choose2(n);
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0; // both labelings trivial
    return (sum_ij - expected) / (max_index - expected);
}

} // namespace gcmcg::cluster
