#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fimc/matrix.hpp"

namespace fimc {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adaptive-moment optimizer state over a fixed list of parameter shapes.
class Adam {
public:
    Adam(AdamConfig config, std::span<const Matrix> params);

    // Applies one update in place. Throws NumericError on a non-finite gradient
    // before touching any parameter.
    void step(std::span<Matrix> params, std::span<const Matrix> grads);

    void reset_moments(std::size_t index);

    std::size_t steps() const noexcept { return step_; }
    const AdamConfig& config() const noexcept { return config_; }
    const Matrix& first_moment(std::size_t index) const { return m_.at(index); }
    const Matrix& second_moment(std::size_t index) const { return v_.at(index); }

private:
    AdamConfig config_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::size_t step_ = 0;
};

}  // namespace fimc
