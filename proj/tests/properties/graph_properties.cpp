#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fimc/graph.hpp"
#include "support.hpp"

using namespace fimc;
using test::kSeeds;
using test::random_matrix;

namespace {

std::vector<std::size_t> random_subset(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(rng() % n);
    std::sort(all.begin(), all.end());
    return all;
}

AdjacencyGraph random_graph(std::size_t n, std::size_t k, std::uint64_t seed) {
    return knn_binarize(random_matrix(n, n, seed, 0.0, 1.0), k);
}

}  // namespace

TEST_CASE("rbf similarity is symmetric with a unit diagonal") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Matrix x = random_matrix(12, 4, seed);
        const SimilarityMatrix s = rbf_similarity(x, median_sq_distance(x));
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(s.values(i, i) == 1.0);
            for (std::size_t j = 0; j < 12; ++j) {
                CHECK(std::abs(s.values(i, j) - s.values(j, i)) <= 1e-12);
                CHECK(s.values(i, j) >= 0.0);
                CHECK(s.values(i, j) <= 1.0);
            }
        }
    }
}

TEST_CASE("binarized graphs have exactly k ones per row") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const std::size_t n = 10 + seed % 5, k = 1 + seed % 6;
        // Coarse values force ties.
        Matrix s = random_matrix(n, n, seed, 0.0, 4.0);
        for (double& v : s.data()) {
            v = std::floor(v);
        }
        for (SelfLoops self : {SelfLoops::include, SelfLoops::exclude}) {
            const AdjacencyGraph a = knn_binarize(s, k, self);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(a.row_degree(i) == k);
                if (self == SelfLoops::exclude) {
                    CHECK_FALSE(a.edge(i, i));
                }
            }
        }
    }
}

TEST_CASE("fused graphs have exactly k ones per row") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const std::size_t n = 15, m = 2 + seed % 3, k = 1 + seed % 5;
        std::vector<LatentGraph> latents;
        std::vector<std::vector<double>> weights;
        for (std::size_t v = 0; v < m; ++v) {
            const Matrix x = random_matrix(n, 3, seed * 10 + v);
            latents.push_back({rbf_similarity(x, median_sq_distance(x)).values});
            const Matrix w = random_matrix(1, n, seed * 10 + v + 5, -1.0, 1.0);
            weights.emplace_back(w.data());
        }
        const AdjacencyGraph a = fuse_graphs(latents, weights, k);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(a.row_degree(i) == k);
        }
    }
}

TEST_CASE("migration only touches the missing rows") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const std::size_t n = 16;
        const AdjacencyGraph local = random_graph(n, 3, seed), fused = random_graph(n, 3, seed + 50);
        const std::vector<std::size_t> missing = random_subset(n, seed);
        const AdjacencyGraph out = migrate_global_structure(local, fused, missing);
        for (std::size_t i = 0; i < n; ++i) {
            const bool is_missing = std::binary_search(missing.begin(), missing.end(), i);
            const AdjacencyGraph& source = is_missing ? fused : local;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(out.edge(i, j) == source.edge(i, j));
            }
        }
    }
}

TEST_CASE("binarization ignores positive scaling") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Matrix g = random_matrix(12, 12, seed, 0.0, 1.0);
        std::mt19937_64 rng(seed);
        const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
        Matrix scaled = g;
        for (double& v : scaled.data()) {
            v *= c;
        }
        for (std::size_t k : {1, 4, 11}) {
            CHECK(knn_binarize(g, k) == knn_binarize(scaled, k));
            CHECK(knn_binarize(g, k, SelfLoops::exclude) == knn_binarize(scaled, k, SelfLoops::exclude));
        }
    }
}

TEST_CASE("top-k masking keeps k entries and never increases any") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const std::size_t n = 9, k = 1 + seed % n;
        const Matrix g = random_matrix(n, n, seed, 0.01, 1.0);
        const Matrix t = topk_mask(g, k);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t zeroed = 0;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(t(i, j) <= g(i, j));
                CHECK((t(i, j) == g(i, j) || t(i, j) == 0.0));
                zeroed += t(i, j) == 0.0 ? 1 : 0;
            }
            CHECK(zeroed == n - k);
        }
    }
}

TEST_CASE("local graphs connect candidates among themselves") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const std::size_t n = 20, k = 3;
        const Matrix x = random_matrix(n, 4, seed);
        std::vector<bool> candidates(n, true);
        for (std::size_t i : random_subset(n / 2, seed)) {
            candidates[i * 2] = false;
        }
        const AdjacencyGraph a = build_local_graph(x, candidates, k);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(a.row_degree(i) == (candidates[i] ? k : 0));
            for (std::size_t j = 0; j < n; ++j) {
                if (a.edge(i, j)) {
                    CHECK(candidates[j]);
                    CHECK(i != j);
                }
            }
        }
    }
}

TEST_CASE("propagation matrices are symmetric when the graph is") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const std::size_t n = 10;
        AdjacencyGraph a = random_graph(n, 3, seed);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (a.edge(i, j)) {
                    a.set_edge(j, i, true);
                }
            }
        }
        const Matrix p = normalize_propagation(a);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(std::abs(p(i, j) - p(j, i)) < 1e-15);
                CHECK(p(i, j) >= 0.0);
            }
        }
    }
}
