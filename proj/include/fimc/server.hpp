#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fimc/clustering.hpp"
#include "fimc/graph.hpp"
#include "fimc/matrix.hpp"
#include "fimc/message.hpp"

namespace fimc {

struct FeatureFusion {
    Matrix features;                        // H = [w'_1 H^1, ..., w'_M H^M]
    std::vector<double> view_means;         // mean silhouette per view
    std::vector<double> view_weights;       // 1 + ln(1 + r^m)
    std::vector<std::size_t> block_bounds;  // M + 1 column offsets
};

// Silhouette-weighted feature concatenation. Throws DegenerateError when every
// view has zero mean silhouette.
FeatureFusion fuse_features(std::span<const Matrix> features,
                            std::span<const std::vector<double>> weights);

// Undoes the fusion scaling: U^m = U[:, block m] / w'_m.
std::vector<Matrix> split_centers(const Matrix& centers, std::span<const std::size_t> block_bounds,
                                  std::span<const double> view_weights);

// Student-t soft assignment of global features to global centers.
Matrix global_soft(const Matrix& features, const Matrix& centers);
// Same sharpening as the client target distribution.
Matrix pseudo_labels(const Matrix& soft);

struct GlobalState {
    std::uint32_t round = 0;
    AdjacencyGraph fused_graph;
    Matrix features;
    Matrix centers;
    std::vector<std::size_t> block_bounds;
    Matrix pseudo_labels;
    std::vector<double> view_means;
    std::vector<double> view_weights;
    Labels labels;
};

struct ServerConfig {
    std::size_t clients = 1;
    std::size_t clusters = 2;
    std::size_t k_neighbors = 10;
    std::uint64_t seed = 0;
    // Bandwidth for client latent graphs; <= 0 selects the median heuristic.
    double bandwidth = 0.0;
    KMeansOptions kmeans{300, 1e-6, 10};
};

struct AggregateResult {
    GlobalState state;
    std::vector<RoundMessage> broadcasts;  // one per client, in client order
};

// Graph fusion, feature fusion, k-means, pseudo-labels and distribution for one
// round. Stateful only for the previous labels used to keep cluster ids stable.
class Server {
public:
    explicit Server(ServerConfig config);

    // `with_labels` = false distributes only the fused graph (after pretraining).
    AggregateResult aggregate(std::span<const RoundMessage> uploads, std::uint32_t round,
                              bool with_labels = true);

    const ServerConfig& config() const noexcept { return config_; }
    const std::optional<GlobalState>& last_state() const noexcept { return last_; }

private:
    ServerConfig config_;
    std::optional<GlobalState> last_;
};

}  // namespace fimc
