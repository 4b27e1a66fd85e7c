#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "fimc/matrix.hpp"

namespace fimc::test {

inline constexpr std::uint64_t kSeeds = 20;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = u(rng);
    }
    return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("fimc_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fimc::test
