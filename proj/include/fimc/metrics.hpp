#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fimc {

// Counts of (predicted, true) label pairs after compacting both label sets.
struct ContingencyTable {
    std::vector<std::vector<std::size_t>> counts;  // [pred][true]
    std::size_t total = 0;

    static ContingencyTable build(std::span<const std::size_t> pred,
                                  std::span<const std::size_t> truth);
};

double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth);
double nmi(std::span<const std::size_t> pred, std::span<const std::size_t> truth);
double ari(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

struct ClusteringScores {
    double acc = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
};

ClusteringScores evaluate(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

}  // namespace fimc
