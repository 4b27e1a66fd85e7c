#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fimc/autodiff.hpp"
#include "fimc/matrix.hpp"

namespace fimc {

// RBF similarity S_ij = exp(-||x_i - x_j||^2 / t).
struct SimilarityMatrix {
    Matrix values;
    double bandwidth = 1.0;

    std::size_t n() const noexcept { return values.rows(); }
};

// Real-valued graph in [0,1] built from learned features.
struct LatentGraph {
    Matrix values;

    std::size_t n() const noexcept { return values.rows(); }
};

// Binary N x N adjacency. Rows are not symmetrized.
class AdjacencyGraph {
public:
    AdjacencyGraph() = default;
    explicit AdjacencyGraph(std::size_t n, std::size_t k = 0) : entries_(n, n), k_(k) {}
    // Throws ParameterError unless m is square with entries in {0, 1}.
    static AdjacencyGraph from_matrix(Matrix m, std::size_t k = 0);

    std::size_t n() const noexcept { return entries_.rows(); }
    std::size_t k() const noexcept { return k_; }
    bool edge(std::size_t i, std::size_t j) const noexcept { return entries_(i, j) != 0.0; }
    void set_edge(std::size_t i, std::size_t j, bool on) noexcept { entries_(i, j) = on ? 1.0 : 0.0; }
    std::size_t row_degree(std::size_t i) const noexcept;
    const Matrix& matrix() const noexcept { return entries_; }

    friend bool operator==(const AdjacencyGraph& a, const AdjacencyGraph& b) noexcept {
        return a.entries_ == b.entries_;
    }

private:
    Matrix entries_;
    std::size_t k_ = 0;
};

// Whether the diagonal competes in a row-wise top-k selection.
enum class SelfLoops { include, exclude };

SimilarityMatrix rbf_similarity(const Matrix& x, double bandwidth);
// Differentiable variant used inside the client losses.
Var rbf_similarity(Var x, double bandwidth);

// Median of pairwise squared distances among the selected rows (all rows when
// `rows` is empty). Falls back to 1 when the median is zero.
double median_sq_distance(const Matrix& x, const std::vector<bool>& rows = {});

// Indices of the k largest entries of `values`, ties broken by lowest index.
// `skip` (if < values.size()) is never selected; `allowed` (if non-empty)
// restricts the candidates.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k,
                                       std::size_t skip = static_cast<std::size_t>(-1),
                                       const std::vector<bool>& allowed = {});

// f_k: top-k entries of each row become 1, the rest 0.
AdjacencyGraph knn_binarize(const Matrix& s, std::size_t k, SelfLoops self = SelfLoops::include);

// tau_k: keep the top-k entries of each row, zero the rest.
Matrix topk_mask(const Matrix& g, std::size_t k, SelfLoops self = SelfLoops::include);
// 0/1 pattern selected by topk_mask.
Matrix topk_pattern(const Matrix& g, std::size_t k, SelfLoops self = SelfLoops::include);

// D^{-1/2} (A + I) D^{-1/2} with D_ii the row sums of A + I.
Matrix normalize_propagation(const AdjacencyGraph& a);

// k-NN graph over the rows flagged in `candidates`. Candidate rows get exactly k
// edges to other candidates (self excluded); the remaining rows are empty.
AdjacencyGraph build_local_graph(const Matrix& x, const std::vector<bool>& candidates, std::size_t k);

// Rows in `missing` come from `fused`, every other row from `local`.
AdjacencyGraph migrate_global_structure(const AdjacencyGraph& local, const AdjacencyGraph& fused,
                                        std::span<const std::size_t> missing);

// Empties the listed rows.
AdjacencyGraph clear_rows(const AdjacencyGraph& g, std::span<const std::size_t> rows);

// f_k( (1/M) sum_m W^m .* latent^m ) with W^m_ij = weights[m][i].
AdjacencyGraph fuse_graphs(std::span<const LatentGraph> latents,
                           std::span<const std::vector<double>> weights, std::size_t k,
                           SelfLoops self = SelfLoops::exclude);

}  // namespace fimc
