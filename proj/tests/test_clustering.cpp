#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "swaro/clustering.hpp"
#include "swaro/data.hpp"

using namespace swaro;

TEST_CASE("K=1 centroid is the column mean") {
    Dataset ds = gen_blobs(40, 2, 3, 0.5, 1);
    Tensor Z = feature_matrix(ds);
    ClusterModel model = kmeans_fit(Z, 1, 50, 1e-10, 7);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < Z.rows(); ++i) mean += Z.at(i, c);
        mean /= double(Z.rows());
        REQUIRE(model.centroids.at(0, c) == Catch::Approx(mean).margin(1e-9));
    }
}

TEST_CASE("two well separated blobs are recovered") {
    Dataset ds = gen_blobs(100, 2, 4, 0.3, 2);
    Tensor Z = feature_matrix(ds);
    ClusterModel model = kmeans_fit(Z, 2, 100, 1e-10, 3);
    // true class means
    std::vector<Tensor> means(2, Tensor::zeros({4}));
    std::vector<std::size_t> counts(2, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto c = std::size_t(ds.labels[i]);
        for (std::size_t d = 0; d < 4; ++d) means[c][d] += ds.features[i][d];
        counts[c]++;
    }
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t d = 0; d < 4; ++d) means[c][d] /= double(counts[c]);
    // each centroid lies within 0.5 of one true mean, and they split up
    std::size_t hit0 = detail::nearest_centroid(means[0], model.centroids);
    std::size_t hit1 = detail::nearest_centroid(means[1], model.centroids);
    REQUIRE(hit0 != hit1);
    REQUIRE(std::sqrt(squared_distance(model.centroids.row(hit0), means[0])) < 0.5);
    REQUIRE(std::sqrt(squared_distance(model.centroids.row(hit1), means[1])) < 0.5);
}

TEST_CASE("identical points do not crash the empty-cluster repair") {
    Tensor Z = Tensor::full({10, 3}, 0.25);
    ClusterModel model = kmeans_fit(Z, 3, 20, 1e-10, 5);
    REQUIRE(model.centroids.all_finite());
    REQUIRE(model.inertia == Catch::Approx(0.0).margin(1e-18));
    PseudoLabels labels = assign_pseudo_labels(model, Z);
    for (std::size_t l : labels.labels) REQUIRE(l < 3);
}

TEST_CASE("assignments match a brute-force nearest-centroid scan") {
    Dataset ds = gen_blobs(60, 3, 5, 0.6, 9);
    Tensor Z = feature_matrix(ds);
    ClusterModel model = kmeans_fit(Z, 3, 50, 1e-10, 11);
    PseudoLabels labels = assign_pseudo_labels(model, Z);
    for (std::size_t i = 0; i < Z.rows(); ++i) {
        std::size_t best = 0;
        double bestd = squared_distance(Z.row(i), model.centroids.row(0));
        for (std::size_t j = 1; j < 3; ++j) {
            double d = squared_distance(Z.row(i), model.centroids.row(j));
            if (d < bestd) { bestd = d; best = j; }
        }
        REQUIRE(labels.labels[i] == best);
    }
}

TEST_CASE("distance ties resolve to the lowest centroid index") {
    ClusterModel model;
    model.k = 2;
    model.centroids = Tensor::matrix(2, 1, {-1.0, 1.0});
    PseudoLabels labels = assign_pseudo_labels(model, Tensor::matrix(1, 1, {0.0}));
    REQUIRE(labels.labels[0] == 0);
}

TEST_CASE("inertia history is non-increasing") {
    Dataset ds = gen_blobs(120, 4, 4, 0.8, 13);
    Tensor Z = feature_matrix(ds);
    ClusterModel model = kmeans_fit(Z, 4, 100, 0.0, 17);
    REQUIRE(model.inertia_history.size() >= 2);
    for (std::size_t i = 1; i < model.inertia_history.size(); ++i)
        REQUIRE(model.inertia_history[i] <= model.inertia_history[i - 1] + 1e-9);
    REQUIRE(model.inertia == model.inertia_history.back());
}

TEST_CASE("clustering is invariant to the row order of the embeddings") {
    Dataset ds = gen_blobs(50, 3, 4, 0.5, 19);
    Tensor Z = feature_matrix(ds);
    std::vector<std::size_t> perm(Z.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(99));
    Tensor Zp = Tensor::zeros({Z.rows(), Z.cols()});
    for (std::size_t i = 0; i < Z.rows(); ++i)
        for (std::size_t c = 0; c < Z.cols(); ++c) Zp.at(i, c) = Z.at(perm[i], c);

    ClusterModel a = kmeans_fit(Z, 3, 100, 1e-12, 23);
    ClusterModel b = kmeans_fit(Zp, 3, 100, 1e-12, 23);
    REQUIRE(a.inertia == Catch::Approx(b.inertia).margin(1e-9));
    // centroid sets agree up to ordering
    for (std::size_t j = 0; j < 3; ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < 3; ++m)
            best = std::min(best, squared_distance(a.centroids.row(j), b.centroids.row(m)));
        REQUIRE(best < 1e-12);
    }
    // labels agree under the permutation, up to a cluster relabeling
    PseudoLabels la = assign_pseudo_labels(a, Z);
    PseudoLabels lb = assign_pseudo_labels(b, Zp);
    for (std::size_t i = 0; i < Z.rows(); ++i)
        for (std::size_t i2 = 0; i2 < Z.rows(); ++i2) {
            bool same_a = la.labels[perm[i]] == la.labels[perm[i2]];
            bool same_b = lb.labels[i] == lb.labels[i2];
            REQUIRE(same_a == same_b);
        }
}

TEST_CASE("reassignment with the fitted model is idempotent") {
    Dataset ds = gen_blobs(40, 2, 3, 0.5, 29);
    Tensor Z = feature_matrix(ds);
    ClusterModel model = kmeans_fit(Z, 2, 100, 1e-12, 31);
    PseudoLabels first = assign_pseudo_labels(model, Z, 1);
    PseudoLabels second = assign_pseudo_labels(model, Z, 2);
    REQUIRE(first.labels == second.labels);
    REQUIRE(first.epoch == 1);
    REQUIRE(second.epoch == 2);
}

TEST_CASE("invalid arguments are rejected with informative messages") {
    Tensor Z = Tensor::zeros({3, 2});
    REQUIRE_THROWS_WITH(kmeans_fit(Z, 5, 10, 1e-8, 1),
                        Catch::Matchers::ContainsSubstring("n=3") &&
                            Catch::Matchers::ContainsSubstring("K=5"));
    REQUIRE_THROWS_AS(kmeans_fit(Z, 0, 10, 1e-8, 1), std::invalid_argument);
    ClusterModel model = kmeans_fit(Z, 2, 10, 1e-8, 1);
    REQUIRE_THROWS_AS(assign_pseudo_labels(model, Tensor::zeros({3, 4})),
                      std::invalid_argument);
}

TEST_CASE("fits are deterministic in the seed") {
    Dataset ds = gen_blobs(80, 4, 3, 0.7, 37);
    Tensor Z = feature_matrix(ds);
    ClusterModel a = kmeans_fit(Z, 4, 50, 1e-10, 41);
    ClusterModel b = kmeans_fit(Z, 4, 50, 1e-10, 41);
    for (std::size_t i = 0; i < a.centroids.size(); ++i)
        REQUIRE(a.centroids[i] == b.centroids[i]);
    REQUIRE(a.inertia == b.inertia);
}
