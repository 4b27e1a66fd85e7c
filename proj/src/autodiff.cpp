#include "fimc/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fimc/errors.hpp"

namespace fimc {

const Matrix& Var::value() const {
    if (tape_ == nullptr) {
        throw Error("Var::value on an unbound variable");
    }
    return tape_->value(id_);
}

Var Tape::constant(Matrix value) {
    if (!value.all_finite()) {
        throw NumericError("Tape::constant: non-finite input " + value.shape_string());
    }
    nodes_.push_back(Node{std::move(value), {}, false, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
    if (!value.all_finite()) {
        throw NumericError("Tape::parameter: non-finite input " + value.shape_string());
    }
    nodes_.push_back(Node{std::move(value), {}, true, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, const char* op, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), op,
                  std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, const char* op, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
        if (v.tape() != this) {
            throw Error(std::string(op) + ": operand recorded on a different tape");
        }
        needs = needs || nodes_[v.id()].requires_grad;
    }
    if (!value.all_finite()) {
        throw NumericError(std::string(op) + ": produced non-finite values " + value.shape_string());
    }
    nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(fn) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var target, const Matrix& g) {
    Node& n = nodes_[target.id()];
    if (!n.requires_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::accumulate(Var target, Matrix&& g) {
    Node& n = nodes_[target.id()];
    if (!n.requires_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = std::move(g);
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) {
        throw Error("Tape::backward: loss recorded on a different tape");
    }
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ShapeError("Tape::backward: loss must be 1x1, got " + lv.shape_string());
    }
    for (auto& n : nodes_) {
        n.grad = Matrix();
        n.has_grad = false;
    }
    if (!nodes_[loss.id()].requires_grad) {
        return;
    }
    nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
    nodes_[loss.id()].has_grad = true;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward) {
            n.backward(*this, i);
        }
    }
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (!n.has_grad) {
        return Matrix(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

namespace ad {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
    }
}

template <typename F>
Matrix map(const Matrix& x, F f) {
    Matrix y = x;
    for (double& v : y.data()) {
        v = f(v);
    }
    return y;
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = *a.tape();
    return t.record(fimc::matmul(a.value(), b.value()), {a, b}, "matmul",
                    [a, b](Tape& tape, std::size_t self) {
                        const Matrix& g = tape.upstream(self);
                        if (tape.requires_grad(a)) {
                            tape.accumulate(a, matmul_nt(g, b.value()));
                        }
                        if (tape.requires_grad(b)) {
                            tape.accumulate(b, matmul_tn(a.value(), g));
                        }
                    });
}

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    return a.tape()->record(a.value() + b.value(), {a, b}, "add",
                            [a, b](Tape& tape, std::size_t self) {
                                tape.accumulate(a, tape.upstream(self));
                                tape.accumulate(b, tape.upstream(self));
                            });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    return a.tape()->record(a.value() - b.value(), {a, b}, "sub",
                            [a, b](Tape& tape, std::size_t self) {
                                tape.accumulate(a, tape.upstream(self));
                                if (tape.requires_grad(b)) {
                                    tape.accumulate(b, -1.0 * tape.upstream(self));
                                }
                            });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    return a.tape()->record(hadamard(a.value(), b.value()), {a, b}, "mul",
                            [a, b](Tape& tape, std::size_t self) {
                                const Matrix& g = tape.upstream(self);
                                if (tape.requires_grad(a)) {
                                    tape.accumulate(a, hadamard(g, b.value()));
                                }
                                if (tape.requires_grad(b)) {
                                    tape.accumulate(b, hadamard(g, a.value()));
                                }
                            });
}

Var scale(Var a, double s) {
    return a.tape()->record(s * a.value(), {a}, "scale", [a, s](Tape& tape, std::size_t self) {
        tape.accumulate(a, s * tape.upstream(self));
    });
}

Var add_row(Var x, Var bias) {
    const Matrix& xv = x.value();
    const Matrix& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != xv.cols()) {
        throw ShapeError("add_row: bias " + bv.shape_string() + " does not broadcast over " +
                         xv.shape_string());
    }
    Matrix y = xv;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        auto r = y.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] += bv(0, j);
        }
    }
    return x.tape()->record(std::move(y), {x, bias}, "add_row",
                            [x, bias](Tape& tape, std::size_t self) {
                                const Matrix& g = tape.upstream(self);
                                tape.accumulate(x, g);
                                if (tape.requires_grad(bias)) {
                                    Matrix gb(1, g.cols());
                                    for (std::size_t i = 0; i < g.rows(); ++i) {
                                        for (std::size_t j = 0; j < g.cols(); ++j) {
                                            gb(0, j) += g(i, j);
                                        }
                                    }
                                    tape.accumulate(bias, std::move(gb));
                                }
                            });
}

Var relu(Var x) {
    return x.tape()->record(map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {x}, "relu",
                            [x](Tape& tape, std::size_t self) {
                                Matrix g = tape.upstream(self);
                                const Matrix& xv = x.value();
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                    if (!(xv.data()[i] > 0.0)) {
                                        g.data()[i] = 0.0;
                                    }
                                }
                                tape.accumulate(x, std::move(g));
                            });
}

Var exp(Var x) {
    return x.tape()->record(map(x.value(), [](double v) { return std::exp(v); }), {x}, "exp",
                            [x](Tape& tape, std::size_t self) {
                                tape.accumulate(x, hadamard(tape.upstream(self), tape.value(self)));
                            });
}

Var log(Var x) {
    for (double v : x.value().data()) {
        if (!(v > 0.0)) {
            throw NumericError("log: non-positive argument " + std::to_string(v));
        }
    }
    return x.tape()->record(map(x.value(), [](double v) { return std::log(v); }), {x}, "log",
                            [x](Tape& tape, std::size_t self) {
                                Matrix g = tape.upstream(self);
                                const Matrix& xv = x.value();
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                    g.data()[i] /= xv.data()[i];
                                }
                                tape.accumulate(x, std::move(g));
                            });
}

Var inv1p(Var x) {
    return x.tape()->record(map(x.value(), [](double v) { return 1.0 / (1.0 + v); }), {x}, "inv1p",
                            [x](Tape& tape, std::size_t self) {
                                Matrix g = tape.upstream(self);
                                const Matrix& y = tape.value(self);
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                    g.data()[i] *= -y.data()[i] * y.data()[i];
                                }
                                tape.accumulate(x, std::move(g));
                            });
}

Var square(Var x) {
    return x.tape()->record(map(x.value(), [](double v) { return v * v; }), {x}, "square",
                            [x](Tape& tape, std::size_t self) {
                                Matrix g = tape.upstream(self);
                                const Matrix& xv = x.value();
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                    g.data()[i] *= 2.0 * xv.data()[i];
                                }
                                tape.accumulate(x, std::move(g));
                            });
}

Var concat_cols(std::span<const Var> blocks) {
    if (blocks.empty()) {
        throw ShapeError("concat_cols: no blocks");
    }
    std::vector<Matrix> values;
    values.reserve(blocks.size());
    for (const Var& b : blocks) {
        values.push_back(b.value());
    }
    std::vector<Var> inputs(blocks.begin(), blocks.end());
    return blocks.front().tape()->record(
        fimc::concat_cols(values), blocks, "concat_cols", [inputs](Tape& tape, std::size_t self) {
            const Matrix& g = tape.upstream(self);
            std::size_t offset = 0;
            for (const Var& b : inputs) {
                const std::size_t w = b.value().cols();
                if (tape.requires_grad(b)) {
                    tape.accumulate(b, slice_cols(g, offset, offset + w));
                }
                offset += w;
            }
        });
}

Var row_normalize(Var x) {
    const Matrix& xv = x.value();
    Matrix y = xv;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        auto r = y.row(i);
        double s = 0.0;
        for (double v : r) {
            s += v;
        }
        if (s == 0.0) {
            throw NumericError("row_normalize: row " + std::to_string(i) + " sums to zero");
        }
        for (double& v : r) {
            v /= s;
        }
    }
    return x.tape()->record(std::move(y), {x}, "row_normalize", [x](Tape& tape, std::size_t self) {
        const Matrix& g = tape.upstream(self);
        const Matrix& y = tape.value(self);
        const Matrix& xv = x.value();
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            double s = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) {
                s += xv(i, j);
                gy += g(i, j) * y(i, j);
            }
            for (std::size_t j = 0; j < g.cols(); ++j) {
                gx(i, j) = (g(i, j) - gy) / s;
            }
        }
        tape.accumulate(x, std::move(gx));
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) {
        s += v;
    }
    return x.tape()->record(Matrix(1, 1, s), {x}, "sum", [x](Tape& tape, std::size_t self) {
        const Matrix& xv = x.value();
        tape.accumulate(x, Matrix(xv.rows(), xv.cols(), tape.upstream(self)(0, 0)));
    });
}

Var mean(Var x) {
    const double n = static_cast<double>(x.value().size());
    if (n == 0.0) {
        throw ShapeError("mean: empty matrix");
    }
    return scale(sum(x), 1.0 / n);
}

Var pairwise_sq_dist(Var a, Var b) {
    return a.tape()->record(fimc::pairwise_sq_dist(a.value(), b.value()), {a, b}, "pairwise_sq_dist",
                            [a, b](Tape& tape, std::size_t self) {
                                const Matrix& g = tape.upstream(self);
                                const Matrix& av = a.value();
                                const Matrix& bv = b.value();
                                if (tape.requires_grad(a)) {
                                    Matrix ga = matmul(g, bv);
                                    for (std::size_t i = 0; i < av.rows(); ++i) {
                                        double rs = 0.0;
                                        for (std::size_t j = 0; j < g.cols(); ++j) {
                                            rs += g(i, j);
                                        }
                                        for (std::size_t k = 0; k < av.cols(); ++k) {
                                            ga(i, k) = 2.0 * (rs * av(i, k) - ga(i, k));
                                        }
                                    }
                                    tape.accumulate(a, std::move(ga));
                                }
                                if (tape.requires_grad(b)) {
                                    Matrix gb = matmul_tn(g, av);
                                    for (std::size_t j = 0; j < bv.rows(); ++j) {
                                        double cs = 0.0;
                                        for (std::size_t i = 0; i < g.rows(); ++i) {
                                            cs += g(i, j);
                                        }
                                        for (std::size_t k = 0; k < bv.cols(); ++k) {
                                            gb(j, k) = 2.0 * (cs * bv(j, k) - gb(j, k));
                                        }
                                    }
                                    tape.accumulate(b, std::move(gb));
                                }
                            });
}

Var pairwise_sq_dist(Var a) {
    return a.tape()->record(fimc::pairwise_sq_dist(a.value()), {a}, "pairwise_sq_dist",
                            [a](Tape& tape, std::size_t self) {
                                const Matrix& g = tape.upstream(self);
                                const Matrix& av = a.value();
                                const std::size_t n = g.rows();
                                Matrix s(n, n);
                                for (std::size_t i = 0; i < n; ++i) {
                                    for (std::size_t j = 0; j < n; ++j) {
                                        s(i, j) = g(i, j) + g(j, i);
                                    }
                                }
                                Matrix ga = matmul(s, av);
                                for (std::size_t i = 0; i < n; ++i) {
                                    double rs = 0.0;
                                    for (std::size_t j = 0; j < n; ++j) {
                                        rs += s(i, j);
                                    }
                                    for (std::size_t k = 0; k < av.cols(); ++k) {
                                        ga(i, k) = 2.0 * (rs * av(i, k) - ga(i, k));
                                    }
                                }
                                tape.accumulate(a, std::move(ga));
                            });
}

Var detach(Var x) { return x.tape()->constant(x.value()); }

}  // namespace ad

double grad_check(const ScalarFn& f, std::span<const Matrix> params, double h) {
    if (!(h > 0.0)) {
        throw ParameterError("grad_check: step must be positive");
    }
    std::vector<Matrix> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const Matrix& p : params) {
            vars.push_back(tape.parameter(p));
        }
        Var loss = f(tape, vars);
        if (!std::isfinite(loss.value()(0, 0))) {
            throw NumericError("grad_check: non-finite objective");
        }
        tape.backward(loss);
        for (const Var& v : vars) {
            analytic.push_back(tape.grad(v));
        }
    }

    std::vector<Matrix> work(params.begin(), params.end());
    auto evaluate = [&]() {
        Tape tape;
        std::vector<Var> vars;
        for (const Matrix& p : work) {
            vars.push_back(tape.constant(p));
        }
        const double v = f(tape, vars).value()(0, 0);
        if (!std::isfinite(v)) {
            throw NumericError("grad_check: non-finite objective under perturbation");
        }
        return v;
    };

    double worst = 0.0;
    for (std::size_t p = 0; p < work.size(); ++p) {
        for (std::size_t e = 0; e < work[p].size(); ++e) {
            const double orig = work[p].data()[e];
            work[p].data()[e] = orig + h;
            const double up = evaluate();
            work[p].data()[e] = orig - h;
            const double down = evaluate();
            work[p].data()[e] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double err =
                std::abs(analytic[p].data()[e] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace fimc
