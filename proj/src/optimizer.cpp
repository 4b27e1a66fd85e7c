#include "fimc/optimizer.hpp"

#include <cmath>

#include "fimc/errors.hpp"

namespace fimc {

Adam::Adam(AdamConfig config, std::span<const Matrix> params) : config_(config) {
    if (!(config_.learning_rate > 0.0) || !(config_.epsilon > 0.0) || config_.beta1 < 0.0 ||
        config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
        throw ParameterError("Adam: invalid hyperparameters");
    }
    for (const Matrix& p : params) {
        m_.emplace_back(p.rows(), p.cols());
        v_.emplace_back(p.rows(), p.cols());
    }
}

void Adam::step(std::span<Matrix> params, std::span<const Matrix> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw ShapeError("Adam::step: expected " + std::to_string(m_.size()) + " parameters");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].same_shape(m_[p]) || !grads[p].same_shape(m_[p])) {
            throw ShapeError("Adam::step: parameter " + std::to_string(p) + " shape " +
                             params[p].shape_string() + " / gradient " + grads[p].shape_string() +
                             " vs state " + m_[p].shape_string());
        }
        if (!grads[p].all_finite()) {
            throw NumericError("Adam::step: non-finite gradient for parameter " + std::to_string(p));
        }
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].data();
        const auto& g = grads[p].data();
        auto& m = m_[p].data();
        auto& v = v_[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

void Adam::reset_moments(std::size_t index) {
    m_.at(index) = Matrix(m_[index].rows(), m_[index].cols());
    v_.at(index) = Matrix(v_[index].rows(), v_[index].cols());
}

}  // namespace fimc
