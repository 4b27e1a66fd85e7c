#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "fimc/clustering.hpp"
#include "fimc/matrix.hpp"

namespace fimc {

// One client's view: N x D_m features; absent rows are zero.
struct ViewDataset {
    Matrix x;
    std::vector<bool> present;
    std::size_t view_id = 0;

    std::size_t samples() const noexcept { return x.rows(); }
    std::size_t dim() const noexcept { return x.cols(); }
    std::vector<std::size_t> missing_indices() const;
};

struct MultiViewData {
    std::vector<ViewDataset> views;
    // Ground truth for evaluation only; never reaches a client.
    std::optional<Labels> labels;

    std::size_t samples() const noexcept { return views.empty() ? 0 : views.front().samples(); }
    // Number of samples present on every view.
    std::size_t complete_samples() const;
};

struct MissingSpec {
    double rate = 0.0;
    std::uint64_t seed = 0;
    std::optional<double> dirichlet_alpha;
};

// Reads view_0.csv ... view_{M-1}.csv plus optional labels.csv and mask.csv.
// Cells may be separated by commas or whitespace. Features are standardized
// over present rows and absent rows are zero-filled.
MultiViewData load_views(const std::filesystem::path& directory);

// Writes the same layout; mask.csv is emitted only when some row is absent.
void save_views(const std::filesystem::path& directory, const MultiViewData& data);

// One non-negative integer per line; errors name the offending line.
Labels read_labels(const std::filesystem::path& file);
void write_labels(const std::filesystem::path& file, const Labels& labels);

// Zero mean / unit variance per column, statistics over present rows only.
void standardize(ViewDataset& view);

// Zeroes every absent row.
void zero_fill(ViewDataset& view);

// Removes views from round(N * rate) samples; each affected sample loses
// round(U(1, M-1)) views and keeps at least one.
MultiViewData apply_missing(MultiViewData data, const MissingSpec& spec);

// Dirichlet(alpha * 1_M) shares; sums to 1.
std::vector<double> dirichlet_shares(double alpha, std::size_t views, std::uint64_t seed);
// Splits `slots` missing-view slots across views by Dirichlet shares with
// largest-remainder rounding; counts sum to `slots` exactly.
std::vector<std::size_t> dirichlet_allocate(double alpha, std::size_t views, std::size_t slots,
                                            std::uint64_t seed);

struct SynthSpec {
    std::size_t samples = 300;
    std::size_t clusters = 3;
    std::vector<std::size_t> dims = {20, 30, 40};
    double separation = 8.0;  // distance of each cluster mean from the origin, in noise sigmas
    std::uint64_t seed = 0;
};

// Shared cluster identity; view m is an independent random linear embedding of
// its own noisy copy of the cluster-centered latent point.
MultiViewData synth_blobs(const SynthSpec& spec);

}  // namespace fimc
