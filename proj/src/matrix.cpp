#include "fimc/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fimc/errors.hpp"

namespace fimc {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match " + shape_string());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("Matrix: ragged initializer list");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

std::string Matrix::shape_string() const {
    std::ostringstream os;
    os << "(" << rows_ << "x" << cols_ << ")";
    return os.str();
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) {
            t(j, i) = (*this)(i, j);
        }
    }
    return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
    for (double& v : data_) {
        v *= s;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    }
    const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c.row(i).data();
        const double* ai = a.row(i).data();
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) {
                continue;
            }
            const double* bk = b.row(k).data();
            for (std::size_t j = 0; j < m; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                         b.shape_string());
    }
    const std::size_t n = a.cols(), inner = a.rows(), m = b.cols();
    Matrix c(n, m);
    for (std::size_t k = 0; k < inner; ++k) {
        const double* ak = a.row(k).data();
        const double* bk = b.row(k).data();
        for (std::size_t i = 0; i < n; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) {
                continue;
            }
            double* ci = c.row(i).data();
            for (std::size_t j = 0; j < m; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                         b.shape_string());
    }
    const std::size_t n = a.rows(), inner = a.cols(), m = b.rows();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row(i).data();
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.row(j).data();
            double s = 0.0;
            for (std::size_t k = 0; k < inner; ++k) {
                s += ai[k] * bj[k];
            }
            c(i, j) = s;
        }
    }
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) {
        c.data()[i] *= b.data()[i];
    }
    return c;
}

Matrix concat_cols(std::span<const Matrix> blocks) {
    if (blocks.empty()) {
        return {};
    }
    const std::size_t n = blocks.front().rows();
    std::size_t total = 0;
    for (const auto& b : blocks) {
        if (b.rows() != n) {
            throw ShapeError("concat_cols: row mismatch " + blocks.front().shape_string() + " vs " +
                             b.shape_string());
        }
        total += b.cols();
    }
    Matrix out(n, total);
    for (std::size_t i = 0; i < n; ++i) {
        double* dst = out.row(i).data();
        for (const auto& b : blocks) {
            const auto src = b.row(i);
            dst = std::copy(src.begin(), src.end(), dst);
        }
    }
    return out;
}

Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t end) {
    if (begin > end || end > m.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " + m.shape_string());
    }
    Matrix out(m.rows(), end - begin);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto src = m.row(i);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
                  src.begin() + static_cast<std::ptrdiff_t>(end), out.row(i).begin());
    }
    return out;
}

Matrix pairwise_sq_dist(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("pairwise_sq_dist: width mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    }
    Matrix d(a.rows(), b.rows());
    const std::size_t dim = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = b.row(j).data();
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = ai[k] - bj[k];
                s += diff * diff;
            }
            d(i, j) = s;
        }
    }
    return d;
}

Matrix pairwise_sq_dist(const Matrix& a) {
    const std::size_t n = a.rows(), dim = a.cols();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row(i).data();
        for (std::size_t j = i + 1; j < n; ++j) {
            const double* aj = a.row(j).data();
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = ai[k] - aj[k];
                s += diff * diff;
            }
            d(i, j) = s;
            d(j, i) = s;
        }
    }
    return d;
}

double frobenius_sq(const Matrix& m) noexcept {
    double s = 0.0;
    for (double v : m.data()) {
        s += v * v;
    }
    return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

}  // namespace fimc
