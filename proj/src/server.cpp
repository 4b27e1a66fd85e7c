#include "fimc/server.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fimc/errors.hpp"
#include "fimc/hungarian.hpp"

namespace fimc {

FeatureFusion fuse_features(std::span<const Matrix> features,
                            std::span<const std::vector<double>> weights) {
    if (features.empty()) {
        throw ParameterError("fuse_features: no client features");
    }
    if (weights.size() != features.size()) {
        throw ParameterError("fuse_features: " + std::to_string(weights.size()) +
                             " weight vectors for " + std::to_string(features.size()) + " views");
    }
    const std::size_t n = features.front().rows();
    FeatureFusion out;
    double norm = 0.0;
    for (std::size_t m = 0; m < features.size(); ++m) {
        if (features[m].rows() != n || weights[m].size() != n) {
            throw ParameterError("fuse_features: view " + std::to_string(m) + " has " +
                                 std::to_string(features[m].rows()) + " rows and " +
                                 std::to_string(weights[m].size()) + " weights, expected " +
                                 std::to_string(n));
        }
        double s = 0.0;
        for (double w : weights[m]) {
            s += w;
        }
        out.view_means.push_back(n > 0 ? s / static_cast<double>(n) : 0.0);
        norm += std::abs(out.view_means.back());
    }
    if (!(norm > 0.0)) {
        throw DegenerateError("fuse_features: all view silhouettes average to zero");
    }
    std::vector<Matrix> scaled;
    out.block_bounds.push_back(0);
    for (std::size_t m = 0; m < features.size(); ++m) {
        const double r = std::clamp(out.view_means[m] / norm, -1.0 + 1e-6, 1.0);
        const double w = 1.0 + std::log(1.0 + r);
        out.view_weights.push_back(w);
        scaled.push_back(w * features[m]);
        out.block_bounds.push_back(out.block_bounds.back() + features[m].cols());
    }
    out.features = concat_cols(scaled);
    return out;
}

std::vector<Matrix> split_centers(const Matrix& centers, std::span<const std::size_t> block_bounds,
                                  std::span<const double> view_weights) {
    if (block_bounds.size() != view_weights.size() + 1 || block_bounds.front() != 0 ||
        block_bounds.back() != centers.cols()) {
        throw ParameterError("split_centers: block boundaries do not partition " +
                             std::to_string(centers.cols()) + " columns");
    }
    std::vector<Matrix> out;
    for (std::size_t m = 0; m < view_weights.size(); ++m) {
        if (view_weights[m] == 0.0) {
            throw DegenerateError("split_centers: view " + std::to_string(m) + " has zero weight");
        }
        out.push_back((1.0 / view_weights[m]) *
                      slice_cols(centers, block_bounds[m], block_bounds[m + 1]));
    }
    return out;
}

Matrix global_soft(const Matrix& features, const Matrix& centers) {
    return soft_assign(features, centers);
}

Matrix pseudo_labels(const Matrix& soft) { return target_distribution(soft); }

Server::Server(ServerConfig config) : config_(config) {
    if (config_.clients == 0) {
        throw ParameterError("Server: need at least one client");
    }
    if (config_.clusters < 2) {
        throw ParameterError("Server: need at least 2 clusters");
    }
}

namespace {

// Permutation of new cluster ids maximizing agreement with the previous labels.
std::vector<std::size_t> align_to(const Labels& previous, const Labels& current, std::size_t k) {
    Matrix cost(k, k);
    for (std::size_t i = 0; i < current.size(); ++i) {
        cost(current[i], previous[i]) -= 1.0;
    }
    const auto match = solve_assignment(cost);
    std::vector<std::size_t> perm(k);
    for (std::size_t c = 0; c < k; ++c) {
        perm[c] = static_cast<std::size_t>(match[c]);
    }
    return perm;
}

}  // namespace

AggregateResult Server::aggregate(std::span<const RoundMessage> uploads, std::uint32_t round,
                                  bool with_labels) {
    const std::size_t m_count = config_.clients;
    std::vector<const ClientUpload*> by_client(m_count, nullptr);
    for (const RoundMessage& msg : uploads) {
        const auto* up = std::get_if<ClientUpload>(&msg.payload);
        if (up == nullptr) {
            throw ProtocolError("Server: expected client uploads, got a broadcast");
        }
        if (msg.round != round) {
            throw ProtocolError("Server: client " + std::to_string(msg.client) + " sent round " +
                                std::to_string(msg.round) + " during round " + std::to_string(round));
        }
        if (msg.client >= m_count) {
            throw ProtocolError("Server: unknown client " + std::to_string(msg.client));
        }
        if (by_client[msg.client] != nullptr) {
            throw ProtocolError("Server: duplicate upload from client " + std::to_string(msg.client));
        }
        by_client[msg.client] = up;
    }
    for (std::size_t c = 0; c < m_count; ++c) {
        if (by_client[c] == nullptr) {
            throw ProtocolError("Server: missing upload from client " + std::to_string(c) +
                                " in round " + std::to_string(round));
        }
    }
    const std::size_t n = by_client.front()->features.rows();
    std::vector<Matrix> features;
    std::vector<std::vector<double>> weights;
    std::vector<LatentGraph> latents;
    for (std::size_t c = 0; c < m_count; ++c) {
        const ClientUpload& up = *by_client[c];
        if (up.features.rows() != n || up.weights.size() != n) {
            throw ProtocolError("Server: client " + std::to_string(c) + " sent " +
                                std::to_string(up.features.rows()) + " feature rows and " +
                                std::to_string(up.weights.size()) + " weights, expected " +
                                std::to_string(n));
        }
        features.push_back(up.features);
        weights.push_back(up.weights);
        const double t = config_.bandwidth > 0.0 ? config_.bandwidth : median_sq_distance(up.features);
        latents.push_back({rbf_similarity(up.features, t).values});
    }

    GlobalState state;
    state.round = round;
    state.fused_graph = fuse_graphs(latents, weights, config_.k_neighbors, SelfLoops::exclude);

    FeatureFusion fusion = fuse_features(features, weights);
    state.features = std::move(fusion.features);
    state.block_bounds = std::move(fusion.block_bounds);
    state.view_means = std::move(fusion.view_means);
    state.view_weights = std::move(fusion.view_weights);

    KMeansResult km = kmeans(state.features, config_.clusters, config_.seed + round, config_.kmeans);
    if (last_ && last_->labels.size() == n) {
        const auto perm = align_to(last_->labels, km.labels, config_.clusters);
        Matrix centers(km.centers.rows(), km.centers.cols());
        for (std::size_t c = 0; c < config_.clusters; ++c) {
            const auto src = km.centers.row(c);
            std::copy(src.begin(), src.end(), centers.row(perm[c]).begin());
        }
        km.centers = std::move(centers);
    }
    state.centers = std::move(km.centers);
    state.pseudo_labels = pseudo_labels(global_soft(state.features, state.centers));
    state.labels = assign_labels(state.pseudo_labels);

    const auto view_centers = split_centers(state.centers, state.block_bounds, state.view_weights);
    AggregateResult out;
    for (std::size_t c = 0; c < m_count; ++c) {
        RoundMessage msg;
        msg.round = round;
        msg.client = static_cast<std::uint16_t>(c);
        ServerBroadcast down;
        down.fused_graph = state.fused_graph.matrix();
        if (with_labels) {
            down.centers = view_centers[c];
            down.pseudo_labels = state.pseudo_labels;
        }
        msg.payload = std::move(down);
        out.broadcasts.push_back(std::move(msg));
    }
    last_ = state;
    out.state = std::move(state);
    return out;
}

}  // namespace fimc
