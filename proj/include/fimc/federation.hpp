#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fimc/client.hpp"
#include "fimc/data.hpp"
#include "fimc/metrics.hpp"
#include "fimc/server.hpp"

namespace fimc {

struct SessionConfig {
    std::size_t clusters = 2;
    std::size_t rounds = 10;
    std::size_t epochs = 100;
    std::size_t pretrain_epochs = 50;
    std::size_t k_neighbors = 10;
    LossWeights weights;
    AdamConfig adam;
    std::size_t hidden_dim = 64;
    std::size_t feature_dim = 32;
    std::size_t mlp_width = 128;
    std::size_t gcn_layers = 2;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::none;
    std::size_t workers = 0;  // 0 = one per client, capped by the hardware
    std::size_t kmeans_restarts = 10;
    double bandwidth = 0.0;  // <= 0 selects the median heuristic

    // Throws ConfigError on invalid counts or weights.
    void validate(const MultiViewData& data) const;
};

struct ClientSummary {
    std::size_t client = 0;
    double first_total = 0.0;
    LossBreakdown last;
    bool degenerate_silhouette = false;
};

struct RoundRecord {
    std::string phase;  // "pretrain" or "round"
    std::size_t round = 0;
    std::vector<ClientSummary> clients;
    std::vector<double> view_means;
    std::vector<double> view_weights;
    std::optional<ClusteringScores> scores;
    double seconds = 0.0;

    // One JSON object; timing is left out unless requested so that reruns
    // produce identical records.
    std::string to_json(bool with_timing = false) const;
};

using RecordSink = std::function<void(const RoundRecord&)>;

struct SessionResult {
    Labels labels;
    std::vector<RoundRecord> records;
    GlobalState final_state;
};

// Pretraining, initial fusion, then `rounds` rounds of local training and
// server aggregation. Module errors are rethrown with the round and client.
SessionResult run_session(const SessionConfig& config, const MultiViewData& data,
                          const RecordSink& sink = {});

// Calls fn(i) for i in [0, count) on at most min(workers, count) threads.
// The first failure in client order is rethrown, prefixed with its client id.
void run_clients_parallel(std::size_t count, std::size_t workers,
                          const std::function<void(std::size_t)>& fn);

}  // namespace fimc
