#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "fimc/matrix.hpp"

namespace fimc {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
public:
    Var() = default;

    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    const Matrix& value() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
// reverse insertion order is a valid reverse topological order.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t node)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var parameter(Matrix value);

    const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
    const Matrix& value(Var v) const { return value(v.id()); }
    bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

    // Seeds d(loss)/d(loss) = 1 and propagates to every node that requires a
    // gradient. The loss must be 1x1.
    void backward(Var loss);

    // Gradient with respect to v; zeros if v never received one.
    Matrix grad(Var v) const;

    std::size_t size() const noexcept { return nodes_.size(); }

    // Used by op implementations.
    Var record(Matrix value, std::initializer_list<Var> inputs, const char* op, BackwardFn fn);
    Var record(Matrix value, std::span<const Var> inputs, const char* op, BackwardFn fn);
    const Matrix& upstream(std::size_t id) const { return nodes_[id].grad; }
    void accumulate(Var target, const Matrix& g);
    void accumulate(Var target, Matrix&& g);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;  // stable addresses: value() references outlive later records
};

// Differentiable primitives. All arguments must live on the same tape.
namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// x (n x d) + bias (1 x d) broadcast over rows.
Var add_row(Var x, Var bias);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
// 1 / (1 + x)
Var inv1p(Var x);
Var square(Var x);
Var concat_cols(std::span<const Var> blocks);
// Divides each row by its sum.
Var row_normalize(Var x);
Var sum(Var x);
Var mean(Var x);
// ||a_i - b_j||^2
Var pairwise_sq_dist(Var a, Var b);
// Symmetric self-distance; exact zero diagonal.
Var pairwise_sq_dist(Var a);
// Same value, no gradient flow back into x.
Var detach(Var x);

}  // namespace ad

// Max over all parameter entries of
//   |analytic - central difference| / max(1, |central difference|).
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
double grad_check(const ScalarFn& f, std::span<const Matrix> params, double h = 1e-5);

}  // namespace fimc
