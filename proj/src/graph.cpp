#include "fimc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fimc/errors.hpp"

namespace fimc {

namespace {

void require_k(std::size_t k, std::size_t n, const char* op) {
    if (k < 1 || k > n) {
        throw ParameterError(std::string(op) + ": k=" + std::to_string(k) + " outside [1, " +
                             std::to_string(n) + "]");
    }
}

std::size_t skip_for(SelfLoops self, std::size_t row) {
    return self == SelfLoops::exclude ? row : static_cast<std::size_t>(-1);
}

}  // namespace

AdjacencyGraph AdjacencyGraph::from_matrix(Matrix m, std::size_t k) {
    if (m.rows() != m.cols()) {
        throw ParameterError("AdjacencyGraph: matrix must be square, got " + m.shape_string());
    }
    for (double v : m.data()) {
        if (v != 0.0 && v != 1.0) {
            throw ParameterError("AdjacencyGraph: entries must be 0 or 1");
        }
    }
    AdjacencyGraph g;
    g.entries_ = std::move(m);
    g.k_ = k;
    return g;
}

std::size_t AdjacencyGraph::row_degree(std::size_t i) const noexcept {
    std::size_t d = 0;
    for (double v : entries_.row(i)) {
        d += v != 0.0 ? 1 : 0;
    }
    return d;
}

SimilarityMatrix rbf_similarity(const Matrix& x, double bandwidth) {
    if (!(bandwidth > 0.0)) {
        throw ParameterError("rbf_similarity: bandwidth must be positive, got " +
                             std::to_string(bandwidth));
    }
    Matrix s = pairwise_sq_dist(x);
    for (double& v : s.data()) {
        v = std::exp(-v / bandwidth);
    }
    return {std::move(s), bandwidth};
}

Var rbf_similarity(Var x, double bandwidth) {
    if (!(bandwidth > 0.0)) {
        throw ParameterError("rbf_similarity: bandwidth must be positive, got " +
                             std::to_string(bandwidth));
    }
    Matrix s = rbf_similarity(x.value(), bandwidth).values;
    return x.tape()->record(std::move(s), {x}, "rbf_similarity",
                            [x, bandwidth](Tape& tape, std::size_t self) {
                                const Matrix& g = tape.upstream(self);
                                const Matrix& y = tape.value(self);
                                const Matrix& xv = x.value();
                                const std::size_t n = g.rows();
                                // dL/dD_ij = -g_ij y_ij / t, symmetrized for the self-distance.
                                Matrix sym(n, n);
                                for (std::size_t i = 0; i < n; ++i) {
                                    for (std::size_t j = 0; j < n; ++j) {
                                        sym(i, j) = -(g(i, j) * y(i, j) + g(j, i) * y(j, i)) / bandwidth;
                                    }
                                }
                                Matrix gx = matmul(sym, xv);
                                for (std::size_t i = 0; i < n; ++i) {
                                    double rs = 0.0;
                                    for (double v : sym.row(i)) {
                                        rs += v;
                                    }
                                    for (std::size_t c = 0; c < xv.cols(); ++c) {
                                        gx(i, c) = 2.0 * (rs * xv(i, c) - gx(i, c));
                                    }
                                }
                                tape.accumulate(x, std::move(gx));
                            });
}

double median_sq_distance(const Matrix& x, const std::vector<bool>& rows) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        if (rows.empty() || rows[i]) {
            idx.push_back(i);
        }
    }
    std::vector<double> d;
    d.reserve(idx.size() * (idx.size() - (idx.empty() ? 0 : 1)) / 2);
    for (std::size_t a = 0; a < idx.size(); ++a) {
        const auto xa = x.row(idx[a]);
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
            const auto xb = x.row(idx[b]);
            double s = 0.0;
            for (std::size_t c = 0; c < xa.size(); ++c) {
                const double diff = xa[c] - xb[c];
                s += diff * diff;
            }
            d.push_back(s);
        }
    }
    if (d.empty()) {
        return 1.0;
    }
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    const double m = *mid;
    return m > 0.0 ? m : 1.0;
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k,
                                       std::size_t skip, const std::vector<bool>& allowed) {
    std::vector<std::size_t> idx;
    idx.reserve(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (j != skip && (allowed.empty() || allowed[j])) {
            idx.push_back(j);
        }
    }
    if (k > idx.size()) {
        throw ParameterError("top_k_indices: k=" + std::to_string(k) + " exceeds " +
                             std::to_string(idx.size()) + " candidates");
    }
    auto better = [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) {
            return values[a] > values[b];
        }
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

AdjacencyGraph knn_binarize(const Matrix& s, std::size_t k, SelfLoops self) {
    const std::size_t n = s.rows();
    require_k(k, self == SelfLoops::exclude ? n - 1 : n, "knn_binarize");
    AdjacencyGraph g(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : top_k_indices(s.row(i), k, skip_for(self, i))) {
            g.set_edge(i, j, true);
        }
    }
    return g;
}

Matrix topk_pattern(const Matrix& g, std::size_t k, SelfLoops self) {
    const std::size_t n = g.rows();
    require_k(k, self == SelfLoops::exclude ? g.cols() - 1 : g.cols(), "topk_mask");
    Matrix mask(n, g.cols());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : top_k_indices(g.row(i), k, skip_for(self, i))) {
            mask(i, j) = 1.0;
        }
    }
    return mask;
}

Matrix topk_mask(const Matrix& g, std::size_t k, SelfLoops self) {
    return hadamard(g, topk_pattern(g, k, self));
}

Matrix normalize_propagation(const AdjacencyGraph& a) {
    const std::size_t n = a.n();
    Matrix p = a.matrix();
    for (std::size_t i = 0; i < n; ++i) {
        p(i, i) += 1.0;
    }
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (double v : p.row(i)) {
            d += v;
        }
        inv_sqrt[i] = 1.0 / std::sqrt(d);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (p(i, j) != 0.0) {
                p(i, j) *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    return p;
}

AdjacencyGraph build_local_graph(const Matrix& x, const std::vector<bool>& candidates, std::size_t k) {
    const std::size_t n = x.rows();
    if (candidates.size() != n) {
        throw ParameterError("build_local_graph: candidate mask has " +
                             std::to_string(candidates.size()) + " entries for " +
                             std::to_string(n) + " rows");
    }
    const auto count = static_cast<std::size_t>(std::count(candidates.begin(), candidates.end(), true));
    if (count == 0) {
        throw ParameterError("build_local_graph: no candidate rows");
    }
    require_k(k, count - 1, "build_local_graph");
    // Neighbor order under exp(-d/t) is the reverse distance order for any t,
    // so ranking by negated distance gives the same graph without a bandwidth.
    Matrix d = pairwise_sq_dist(x);
    AdjacencyGraph g(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        if (!candidates[i]) {
            continue;
        }
        auto r = d.row(i);
        std::vector<double> neg(r.begin(), r.end());
        for (double& v : neg) {
            v = -v;
        }
        for (std::size_t j : top_k_indices(neg, k, i, candidates)) {
            g.set_edge(i, j, true);
        }
    }
    return g;
}

AdjacencyGraph migrate_global_structure(const AdjacencyGraph& local, const AdjacencyGraph& fused,
                                        std::span<const std::size_t> missing) {
    if (local.n() != fused.n()) {
        throw ParameterError("migrate_global_structure: graph sizes differ (" +
                             std::to_string(local.n()) + " vs " + std::to_string(fused.n()) + ")");
    }
    Matrix out = local.matrix();
    for (std::size_t i : missing) {
        if (i >= local.n()) {
            throw ParameterError("migrate_global_structure: sample index " + std::to_string(i) +
                                 " out of range for n=" + std::to_string(local.n()));
        }
        const auto src = fused.matrix().row(i);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return AdjacencyGraph::from_matrix(std::move(out), local.k());
}

AdjacencyGraph clear_rows(const AdjacencyGraph& g, std::span<const std::size_t> rows) {
    Matrix out = g.matrix();
    for (std::size_t i : rows) {
        if (i >= g.n()) {
            throw ParameterError("clear_rows: index " + std::to_string(i) + " out of range");
        }
        std::fill(out.row(i).begin(), out.row(i).end(), 0.0);
    }
    return AdjacencyGraph::from_matrix(std::move(out), g.k());
}

AdjacencyGraph fuse_graphs(std::span<const LatentGraph> latents,
                           std::span<const std::vector<double>> weights, std::size_t k,
                           SelfLoops self) {
    if (latents.empty()) {
        throw ParameterError("fuse_graphs: no client graphs");
    }
    if (weights.size() != latents.size()) {
        throw ParameterError("fuse_graphs: " + std::to_string(weights.size()) + " weight vectors for " +
                             std::to_string(latents.size()) + " graphs");
    }
    const std::size_t n = latents.front().n();
    Matrix acc(n, n);
    const double inv_m = 1.0 / static_cast<double>(latents.size());
    for (std::size_t m = 0; m < latents.size(); ++m) {
        const Matrix& g = latents[m].values;
        if (g.rows() != n || g.cols() != n) {
            throw ParameterError("fuse_graphs: graph " + std::to_string(m) + " has shape " +
                                 g.shape_string() + ", expected n=" + std::to_string(n));
        }
        if (weights[m].size() != n) {
            throw ParameterError("fuse_graphs: weight vector " + std::to_string(m) + " has length " +
                                 std::to_string(weights[m].size()));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double w = weights[m][i] * inv_m;
            auto dst = acc.row(i);
            auto src = g.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                dst[j] += w * src[j];
            }
        }
    }
    return knn_binarize(acc, k, self);
}

}  // namespace fimc
