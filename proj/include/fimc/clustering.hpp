#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fimc/autodiff.hpp"
#include "fimc/matrix.hpp"

namespace fimc {

using Labels = std::vector<std::size_t>;

// Student-t soft assignment:
//   q_ij = (1 + ||h_i - u_j||^2)^-1 / sum_j' (1 + ||h_i - u_j'||^2)^-1
Matrix soft_assign(const Matrix& features, const Matrix& centers);
Var soft_assign(Var features, Var centers);

// Sharpened target distribution p_ij ∝ q_ij^2 / f_j with f_j = sum_i q_ij.
// Throws DegenerateError when a column of q sums to zero.
Matrix target_distribution(const Matrix& q);

// KL(P || Q) = sum_ij p_ij ln(p_ij / q_ij), with 0 ln 0 = 0.
double loss_kl(const Matrix& p, const Matrix& q);
// Differentiable in q; p is treated as a constant target.
Var loss_kl(const Matrix& p, Var q);

// Row-wise argmax, ties resolved to the lowest index.
Labels assign_labels(const Matrix& p);

// Per-sample silhouette with Euclidean distances; singletons score 0.
// Throws DegenerateError with fewer than two non-empty clusters.
std::vector<double> silhouette(const Matrix& features, std::span<const std::size_t> labels);

struct KMeansOptions {
    std::size_t max_iterations = 300;
    double tolerance = 1e-6;
    // Independent k-means++ starts; the lowest-inertia run wins.
    std::size_t restarts = 1;
};

struct KMeansResult {
    Matrix centers;
    Labels labels;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations. Empty clusters are re-seeded
// with the point farthest from its current center. Deterministic given seed.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options = {});

}  // namespace fimc
