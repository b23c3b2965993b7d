#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "swaro/rng.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

struct ClusterModel {
    Tensor centroids;  // K x d
    std::size_t k = 0;
    double inertia = 0.0;
    std::size_t iterations_run = 0;
    std::vector<double> inertia_history;  // after each assignment step
};

struct PseudoLabels {
    std::vector<std::size_t> labels;
    std::size_t epoch = 0;  // stamp of the clustering they came from
};

namespace detail {

inline std::size_t nearest_centroid(const Tensor& z, const Tensor& centroids) {
    std::size_t best = 0;
    double bestd = std::numeric_limits<double>::infinity();
    std::size_t d = centroids.cols();
    for (std::size_t j = 0; j < centroids.rows(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            double diff = z[c] - centroids.at(j, c);
            s += diff * diff;
        }
        if (s < bestd) {  // strict: ties resolve to the lowest index
            bestd = s;
            best = j;
        }
    }
    return best;
}

// Lexicographic row order makes the seeded init invariant to row shuffling.
inline std::vector<std::size_t> lexicographic_row_order(const Tensor& Z) {
    std::vector<std::size_t> order(Z.rows());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        for (std::size_t c = 0; c < Z.cols(); ++c) {
            if (Z.at(a, c) != Z.at(b, c)) return Z.at(a, c) < Z.at(b, c);
        }
        return false;
    });
    return order;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are reseeded at
/// the point farthest from its currently assigned centroid.
inline ClusterModel kmeans_fit(const Tensor& Z, std::size_t k, std::size_t max_iters,
                               double tol, std::uint64_t seed) {
    if (Z.rank() != 2) throw std::invalid_argument("kmeans_fit: embeddings must be a matrix");
    std::size_t n = Z.rows(), d = Z.cols();
    if (k < 1 || n < k)
        throw std::invalid_argument("kmeans_fit: need n >= K >= 1, got n=" +
                                    std::to_string(n) + " K=" + std::to_string(k));
    if (max_iters < 1) throw std::invalid_argument("kmeans_fit: max_iters must be >= 1");
    if (tol < 0.0) throw std::invalid_argument("kmeans_fit: tol must be >= 0");

    auto rng = make_rng(seed, /*stream=*/0x43A);
    std::vector<std::size_t> order = detail::lexicographic_row_order(Z);

    // k-means++ over the sorted row view
    Tensor centroids = Tensor::zeros({k, d});
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    {
        std::size_t first = order[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)];
        for (std::size_t c = 0; c < d; ++c) centroids.at(0, c) = Z.at(first, c);
        for (std::size_t j = 1; j <= k; ++j) {
            double total = 0.0;
            for (std::size_t idx : order) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    double diff = Z.at(idx, c) - centroids.at(j - 1, c);
                    s += diff * diff;
                }
                dist2[idx] = std::min(dist2[idx], s);
                total += dist2[idx];
            }
            if (j == k) break;
            std::size_t pick = order[0];
            if (total > 0.0) {
                double target = std::uniform_real_distribution<double>(0.0, total)(rng);
                double acc = 0.0;
                for (std::size_t idx : order) {
                    acc += dist2[idx];
                    if (acc >= target) { pick = idx; break; }
                }
            } else {
                pick = order[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)];
            }
            for (std::size_t c = 0; c < d; ++c) centroids.at(j, c) = Z.at(pick, c);
        }
    }

    ClusterModel model;
    model.k = k;
    std::vector<std::size_t> assign(n, 0);
    std::vector<std::size_t> counts(k, 0);

    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        // assignment
        double inertia = 0.0;
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = detail::nearest_centroid(Z.row(i), centroids);
            ++counts[assign[i]];
            for (std::size_t c = 0; c < d; ++c) {
                double diff = Z.at(i, c) - centroids.at(assign[i], c);
                inertia += diff * diff;
            }
        }
        model.inertia_history.push_back(inertia);
        model.inertia = inertia;
        model.iterations_run = iter + 1;

        // repair empty clusters: move them onto the farthest point
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] > 0) continue;
            std::size_t far = 0;
            double fard = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    double diff = Z.at(i, c) - centroids.at(assign[i], c);
                    s += diff * diff;
                }
                if (s > fard) { fard = s; far = i; }
            }
            if (counts[assign[far]] > 1) {
                --counts[assign[far]];
                for (std::size_t c = 0; c < d; ++c) centroids.at(j, c) = Z.at(far, c);
                assign[far] = j;
                ++counts[j];
            } else {
                // all points coincide with their centroids; duplicate one
                for (std::size_t c = 0; c < d; ++c)
                    centroids.at(j, c) = Z.at(far, c);
                ++counts[j];
                --counts[j];  // stays empty, harmless for identical data
            }
        }

        // update
        Tensor next = Tensor::zeros({k, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) next.at(assign[i], c) += Z.at(i, c);
        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) {
                for (std::size_t c = 0; c < d; ++c) next.at(j, c) = centroids.at(j, c);
                continue;
            }
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                next.at(j, c) /= double(counts[j]);
                double diff = next.at(j, c) - centroids.at(j, c);
                s += diff * diff;
            }
            shift = std::max(shift, std::sqrt(s));
        }
        centroids = next;
        if (shift < tol) break;
    }

    // final assignment so inertia matches the returned centroids
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = detail::nearest_centroid(Z.row(i), centroids);
        for (std::size_t c = 0; c < d; ++c) {
            double diff = Z.at(i, c) - centroids.at(j, c);
            inertia += diff * diff;
        }
    }
    model.inertia_history.push_back(inertia);
    model.inertia = inertia;
    model.centroids = std::move(centroids);
    return model;
}

/// Nearest-centroid pseudo-labels; ties break to the lowest centroid index.
inline PseudoLabels assign_pseudo_labels(const ClusterModel& model, const Tensor& Z,
                                         std::size_t epoch = 0) {
    if (Z.rank() != 2 || Z.cols() != model.centroids.cols())
        throw std::invalid_argument("assign_pseudo_labels: embedding width " +
                                    Z.shape_string() + " does not match centroids " +
                                    model.centroids.shape_string());
    PseudoLabels out;
    out.epoch = epoch;
    out.labels.reserve(Z.rows());
    for (std::size_t i = 0; i < Z.rows(); ++i)
        out.labels.push_back(detail::nearest_centroid(Z.row(i), model.centroids));
    return out;
}

}  // namespace swaro
