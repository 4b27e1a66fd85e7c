#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fimc/metrics.hpp"
#include "support.hpp"

using namespace fimc;
using test::kSeeds;
using L = std::vector<std::size_t>;

namespace {

L random_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    L y(n);
    for (std::size_t& v : y) {
        v = rng() % k;
    }
    return y;
}

L relabel(const L& y, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    L out(y.size());
    std::transform(y.begin(), y.end(), out.begin(), [&](std::size_t l) { return perm[l]; });
    return out;
}

bool nonconstant(const L& y) {
    return std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) != y.end();
}

}  // namespace

TEST_CASE("metrics ignore relabeling") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t k = 2 + seed % 5, n = 30 + seed;
        const L p = random_labels(n, k, rng), t = random_labels(n, k, rng);
        const L p2 = relabel(p, k, rng), t2 = relabel(t, k, rng);
        const ClusteringScores a = evaluate(p, t), b = evaluate(p2, t2);
        CHECK(a.acc == b.acc);
        CHECK(std::abs(a.nmi - b.nmi) < 1e-12);
        CHECK(std::abs(a.ari - b.ari) < 1e-12);
    }
}

TEST_CASE("balanced predictions reach at least 1/K accuracy") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t k = 2 + seed % 5, n = k * (5 + seed % 4);
        L p(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = i % k;
        }
        std::shuffle(p.begin(), p.end(), rng);
        const L t = random_labels(n, k, rng);
        CHECK(accuracy(p, t) >= 1.0 / static_cast<double>(k) - 1e-12);
    }
}

TEST_CASE("a labeling scores perfectly against itself") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        std::mt19937_64 rng(seed);
        L p = random_labels(20 + seed, 2 + seed % 4, rng);
        if (!nonconstant(p)) {
            p[0] = p[1] + 1;
        }
        const ClusteringScores s = evaluate(p, p);
        CHECK(s.acc == 1.0);
        CHECK(std::abs(s.nmi - 1.0) < 1e-12);
        CHECK(std::abs(s.ari - 1.0) < 1e-12);
    }
}

TEST_CASE("scores stay in range") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        std::mt19937_64 rng(seed);
        const L p = random_labels(40, 4, rng), t = random_labels(40, 3, rng);
        const ClusteringScores s = evaluate(p, t);
        CHECK(s.acc > 0.0);
        CHECK(s.acc <= 1.0);
        CHECK(s.nmi >= 0.0);
        CHECK(s.nmi <= 1.0 + 1e-12);
        CHECK(s.ari <= 1.0 + 1e-12);
    }
}
