#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fimc/errors.hpp"
#include "fimc/graph.hpp"
#include "support.hpp"

using namespace fimc;

namespace {

// The row of interest sits first in a square matrix whose other rows are zero.
Matrix row_graph(std::initializer_list<double> row) {
    Matrix m(row.size(), row.size());
    std::copy(row.begin(), row.end(), m.row(0).begin());
    return m;
}

std::vector<double> first_row(const AdjacencyGraph& g) {
    return {g.matrix().row(0).begin(), g.matrix().row(0).end()};
}

bool near(const Matrix& a, const Matrix& b, double tol = 1e-15) {
    if (!a.same_shape(b)) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a.data()[i] - b.data()[i]) > tol) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("rbf similarity of identical rows is one") {
    const Matrix x{{1, 2}, {1, 2}, {3, 0}};
    const SimilarityMatrix s = rbf_similarity(x, 2.0);
    CHECK(s.values(0, 1) == 1.0);
    CHECK(s.values(1, 0) == 1.0);
    CHECK(s.bandwidth == 2.0);
}

TEST_CASE("rbf similarity at unit distance and unit bandwidth") {
    const Matrix x{{0, 0}, {1, 0}};
    const SimilarityMatrix s = rbf_similarity(x, 1.0);
    CHECK(s.values(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(s.values(0, 1) == doctest::Approx(0.36788).epsilon(1e-5));
}

TEST_CASE("rbf similarity tends to one for a huge bandwidth") {
    const SimilarityMatrix s = rbf_similarity(test::random_matrix(5, 3, 11), 1e9);
    for (double v : s.values.data()) {
        CHECK(std::abs(v - 1.0) < 1e-6);
    }
}

TEST_CASE("rbf similarity rejects a non-positive bandwidth") {
    CHECK_THROWS_AS(rbf_similarity(Matrix(2, 2), 0.0), ParameterError);
    CHECK_THROWS_AS(rbf_similarity(Matrix(2, 2), -1.0), ParameterError);
}

TEST_CASE("knn_binarize with k = n gives the all-ones graph") {
    const AdjacencyGraph g = knn_binarize(test::random_matrix(4, 4, 12), 4);
    CHECK(g.matrix() == Matrix::ones(4, 4));
    CHECK(g.k() == 4);
}

TEST_CASE("knn_binarize keeps the k largest entries of a row") {
    CHECK(first_row(knn_binarize(row_graph({0.9, 0.1, 0.5}), 1)) == std::vector<double>{1, 0, 0});
    CHECK(first_row(knn_binarize(row_graph({0.9, 0.1, 0.5}), 2)) == std::vector<double>{1, 0, 1});
}

TEST_CASE("knn_binarize rejects k outside [1, n]") {
    CHECK_THROWS_AS(knn_binarize(row_graph({0.9, 0.1, 0.5}), 0), ParameterError);
    CHECK_THROWS_AS(knn_binarize(row_graph({0.9, 0.1, 0.5}), 4), ParameterError);
}

TEST_CASE("topk_mask keeps the largest values unchanged") {
    CHECK(topk_mask(row_graph({0.9, 0.1, 0.5}), 2) == row_graph({0.9, 0, 0.5}));
    const Matrix g = test::random_matrix(3, 3, 13, 0.0, 1.0);
    CHECK(topk_mask(g, 3) == g);
}

TEST_CASE("topk_mask breaks ties towards the lowest column") {
    CHECK(topk_mask(row_graph({0.4, 0.4, 0.4}), 1) == row_graph({0.4, 0, 0}));
    CHECK(topk_mask(row_graph({0.4, 0.4, 0.4}), 2) == row_graph({0.4, 0.4, 0}));
}

TEST_CASE("topk_mask rejects k outside [1, n]") {
    CHECK_THROWS_AS(topk_mask(row_graph({0.9, 0.1}), 0), ParameterError);
    CHECK_THROWS_AS(topk_mask(row_graph({0.9, 0.1}), 3), ParameterError);
}

TEST_CASE("top-k selection can exclude the diagonal") {
    const Matrix s{{1.0, 0.2, 0.7}, {0.2, 1.0, 0.9}, {0.7, 0.9, 1.0}};
    const AdjacencyGraph g = knn_binarize(s, 1, SelfLoops::exclude);
    CHECK(g.matrix() == Matrix{{0, 0, 1}, {0, 0, 1}, {0, 1, 0}});
}

TEST_CASE("propagation of an isolated node") {
    const Matrix p = normalize_propagation(AdjacencyGraph(1));
    REQUIRE(p.rows() == 1);
    CHECK(p(0, 0) == 1.0);
}

TEST_CASE("propagation of two mutually connected nodes") {
    // A + I = ones(2), D = diag(2, 2), so every entry is 1 / sqrt(2 * 2).
    const AdjacencyGraph a = AdjacencyGraph::from_matrix(Matrix{{0, 1}, {1, 0}});
    CHECK(near(normalize_propagation(a), Matrix(2, 2, 0.5)));
}

TEST_CASE("propagation row sums on a 4-ring") {
    Matrix ring(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        ring(i, (i + 1) % 4) = 1.0;
        ring(i, (i + 3) % 4) = 1.0;
    }
    const Matrix p = normalize_propagation(AdjacencyGraph::from_matrix(ring));
    // Every degree of A + I is 3, so nonzero entries are 1/3.
    for (std::size_t i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            const double expected = (ring(i, j) != 0.0 || i == j) ? 1.0 / 3.0 : 0.0;
            CHECK(p(i, j) == doctest::Approx(expected).epsilon(1e-15));
            sum += p(i, j);
        }
        CHECK(sum <= 1.0 + 1e-12);
    }
}

TEST_CASE("from_matrix rejects non-binary entries") {
    CHECK_THROWS_AS(AdjacencyGraph::from_matrix(Matrix{{0, 0.5}, {1, 0}}), ParameterError);
    CHECK_THROWS_AS(AdjacencyGraph::from_matrix(Matrix(2, 3)), ParameterError);
}

TEST_CASE("migration with no missing samples returns the local graph") {
    const AdjacencyGraph local = knn_binarize(test::random_matrix(4, 4, 14), 2);
    const AdjacencyGraph fused = knn_binarize(test::random_matrix(4, 4, 15), 2);
    CHECK(migrate_global_structure(local, fused, {}) == local);
}

TEST_CASE("migration with every sample missing returns the fused graph") {
    const AdjacencyGraph local = knn_binarize(test::random_matrix(4, 4, 16), 2);
    const AdjacencyGraph fused = knn_binarize(test::random_matrix(4, 4, 17), 2);
    const std::vector<std::size_t> all{0, 1, 2, 3};
    CHECK(migrate_global_structure(local, fused, all) == fused);
}

TEST_CASE("migration replaces exactly the missing rows") {
    const AdjacencyGraph local = AdjacencyGraph::from_matrix(Matrix{{0, 1, 0}, {1, 0, 0}, {1, 0, 0}});
    const AdjacencyGraph fused = AdjacencyGraph::from_matrix(Matrix{{0, 0, 1}, {0, 0, 1}, {0, 1, 0}});
    const AdjacencyGraph out = migrate_global_structure(local, fused, std::vector<std::size_t>{1});
    CHECK(out.matrix() == Matrix{{0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
    // Inputs untouched.
    CHECK(local.matrix() == Matrix{{0, 1, 0}, {1, 0, 0}, {1, 0, 0}});
}

TEST_CASE("migration rejects out-of-range indices") {
    const AdjacencyGraph g(3);
    CHECK_THROWS_AS(migrate_global_structure(g, g, std::vector<std::size_t>{3}), ParameterError);
    CHECK_THROWS_AS(migrate_global_structure(g, AdjacencyGraph(4), {}), ParameterError);
}

TEST_CASE("fusing one binary latent with unit weights returns it") {
    Matrix a(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        a(i, (i + 1) % 4) = 1.0;
        a(i, (i + 2) % 4) = 1.0;
    }
    const std::vector<LatentGraph> latents{{a}};
    const std::vector<std::vector<double>> w{std::vector<double>(4, 1.0)};
    CHECK(fuse_graphs(latents, w, 2).matrix() == a);
}

TEST_CASE("fusing two identical latents equals fusing one") {
    const Matrix s = rbf_similarity(test::random_matrix(6, 2, 18), 1.0).values;
    const std::vector<LatentGraph> one{{s}}, two{{s}, {s}};
    const std::vector<std::vector<double>> w1{std::vector<double>(6, 0.5)};
    const std::vector<std::vector<double>> w2{std::vector<double>(6, 0.5), std::vector<double>(6, 0.5)};
    CHECK(fuse_graphs(two, w2, 3) == fuse_graphs(one, w1, 3));
}

TEST_CASE("a zero-weight client drops out of the fused graph") {
    const Matrix s1 = rbf_similarity(test::random_matrix(6, 2, 19), 1.0).values;
    const Matrix s2 = rbf_similarity(test::random_matrix(6, 2, 20), 1.0).values;
    const std::vector<LatentGraph> latents{{s1}, {s2}};
    const std::vector<std::vector<double>> w{std::vector<double>(6, 1.0), std::vector<double>(6, 0.0)};
    const AdjacencyGraph fused = fuse_graphs(latents, w, 2);
    CHECK(fused == knn_binarize(0.5 * s1, 2, SelfLoops::exclude));
    CHECK(fused == knn_binarize(s1, 2, SelfLoops::exclude));
}

TEST_CASE("fuse_graphs rejects an empty client list") {
    CHECK_THROWS_AS(fuse_graphs({}, {}, 1), ParameterError);
}

TEST_CASE("local graphs link candidates only") {
    const Matrix x{{0.0}, {0.1}, {5.0}, {5.2}, {0.0}};
    const std::vector<bool> candidates{true, true, true, true, false};
    const AdjacencyGraph g = build_local_graph(x, candidates, 1);
    CHECK(g.matrix() ==
          Matrix{{0, 1, 0, 0, 0}, {1, 0, 0, 0, 0}, {0, 0, 0, 1, 0}, {0, 0, 1, 0, 0}, {0, 0, 0, 0, 0}});
    CHECK_THROWS_AS(build_local_graph(x, candidates, 4), ParameterError);
}

TEST_CASE("median squared distance heuristic") {
    // Pairwise squared distances 1, 4, 9: median 4.
    const Matrix x{{0.0}, {1.0}, {3.0}};
    CHECK(median_sq_distance(x) == 4.0);
    const std::vector<bool> rows{true, true, false};
    CHECK(median_sq_distance(x, rows) == 1.0);
    CHECK(median_sq_distance(Matrix(3, 2)) == 1.0);  // all distances zero
}
