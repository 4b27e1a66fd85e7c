#include "fimc/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "fimc/errors.hpp"

namespace fimc {

namespace {

// Portable uniform draw in [0, 1) from the raw engine output.
double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

Matrix soft_assign(const Matrix& features, const Matrix& centers) {
    if (centers.rows() < 2) {
        throw ParameterError("soft_assign: need at least 2 centers, got " +
                             std::to_string(centers.rows()));
    }
    Matrix q = pairwise_sq_dist(features, centers);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        auto r = q.row(i);
        double s = 0.0;
        for (double& v : r) {
            v = 1.0 / (1.0 + v);
            s += v;
        }
        for (double& v : r) {
            v /= s;
        }
    }
    return q;
}

Var soft_assign(Var features, Var centers) {
    if (centers.value().rows() < 2) {
        throw ParameterError("soft_assign: need at least 2 centers, got " +
                             std::to_string(centers.value().rows()));
    }
    return ad::row_normalize(ad::inv1p(ad::pairwise_sq_dist(features, centers)));
}

Matrix target_distribution(const Matrix& q) {
    const std::size_t n = q.rows(), k = q.cols();
    std::vector<double> f(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            f[j] += q(i, j);
        }
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (!(f[j] > 0.0)) {
            throw DegenerateError("target_distribution: cluster " + std::to_string(j) +
                                  " has zero total assignment");
        }
    }
    Matrix p(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            p(i, j) = q(i, j) * q(i, j) / f[j];
            s += p(i, j);
        }
        if (!(s > 0.0)) {
            throw DegenerateError("target_distribution: row " + std::to_string(i) + " is all zero");
        }
        for (std::size_t j = 0; j < k; ++j) {
            p(i, j) /= s;
        }
    }
    return p;
}

double loss_kl(const Matrix& p, const Matrix& q) {
    if (!p.same_shape(q)) {
        throw ShapeError("loss_kl: " + p.shape_string() + " vs " + q.shape_string());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i], qi = q.data()[i];
        if (pi == 0.0) {
            continue;
        }
        if (!(qi > 0.0)) {
            throw NumericError("loss_kl: q is zero where p is positive (entry " + std::to_string(i) +
                               ")");
        }
        s += pi * std::log(pi / qi);
    }
    return s;
}

Var loss_kl(const Matrix& p, Var q) {
    const Matrix& qv = q.value();
    if (!p.same_shape(qv)) {
        throw ShapeError("loss_kl: " + p.shape_string() + " vs " + qv.shape_string());
    }
    double entropy = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i];
        if (pi == 0.0) {
            continue;
        }
        if (!(qv.data()[i] > 0.0)) {
            throw NumericError("loss_kl: q is zero where p is positive (entry " + std::to_string(i) +
                               ")");
        }
        entropy += pi * std::log(pi);
    }
    Tape& tape = *q.tape();
    // Entries where p = 0 contribute nothing; clamp q there so log stays finite.
    Matrix safe_mask(qv.rows(), qv.cols(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(qv.data()[i] > 0.0)) {
            safe_mask.data()[i] = 1.0;
        }
    }
    Var logq = ad::log(ad::add(q, tape.constant(std::move(safe_mask))));
    Var cross = ad::sum(ad::mul(tape.constant(p), logq));
    return ad::sub(tape.constant(Matrix(1, 1, entropy)), cross);
}

Labels assign_labels(const Matrix& p) {
    Labels y(p.rows(), 0);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const auto r = p.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < r.size(); ++j) {
            if (r[j] > r[best]) {
                best = j;
            }
        }
        y[i] = best;
    }
    return y;
}

std::vector<double> silhouette(const Matrix& features, std::span<const std::size_t> labels) {
    const std::size_t n = features.rows();
    if (labels.size() != n) {
        throw ParameterError("silhouette: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " samples");
    }
    std::size_t k = 0;
    for (std::size_t l : labels) {
        k = std::max(k, l + 1);
    }
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t l : labels) {
        ++sizes[l];
    }
    const auto nonempty = std::count_if(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });
    if (nonempty < 2) {
        throw DegenerateError("silhouette: need at least two non-empty clusters");
    }
    std::vector<double> w(n, 0.0);
    std::vector<double> dist_sum(k);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t own = labels[i];
        if (sizes[own] <= 1) {
            continue;
        }
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                dist_sum[labels[j]] += std::sqrt(sq_dist(features.row(i), features.row(j)));
            }
        }
        const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            if (c != own && sizes[c] > 0) {
                b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
            }
        }
        const double denom = std::max(a, b);
        w[i] = denom > 0.0 ? std::clamp((b - a) / denom, -1.0, 1.0) : 0.0;
    }
    return w;
}

namespace {

KMeansResult kmeans_once(const Matrix& x, std::size_t k, std::mt19937_64& rng,
                         const KMeansOptions& options) {
    const std::size_t n = x.rows(), dim = x.cols();
    Matrix centers(k, dim);
    std::vector<double> closest(n, std::numeric_limits<double>::infinity());

    // k-means++ seeding.
    std::size_t first = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    first = std::min(first, n - 1);
    std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            closest[i] = std::min(closest[i], sq_dist(x.row(i), centers.row(c - 1)));
            total += closest[i];
        }
        std::size_t pick = n - 1;
        if (total > 0.0) {
            const double target = uniform01(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += closest[i];
                if (acc > target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)), n - 1);
        }
        std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
    }

    Labels labels(n, 0);
    std::vector<double> best_d(n, 0.0);
    std::size_t iter = 0;
    for (; iter < options.max_iterations; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist(x.row(i), centers.row(c));
                if (d < best) {
                    best = d;
                    labels[i] = c;
                }
            }
            best_d[i] = best;
        }
        Matrix next(k, dim);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[labels[i]];
            auto dst = next.row(labels[i]);
            auto src = x.row(i);
            for (std::size_t d = 0; d < dim; ++d) {
                dst[d] += src[d];
            }
        }
        std::vector<char> taken(n, 0);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (double& v : next.row(c)) {
                    v /= static_cast<double>(counts[c]);
                }
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i] && best_d[i] > far_d) {
                    far_d = best_d[i];
                    far = i;
                }
            }
            taken[far] = 1;
            best_d[far] = 0.0;
            std::copy(x.row(far).begin(), x.row(far).end(), next.row(c).begin());
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            shift = std::max(shift, std::sqrt(sq_dist(centers.row(c), next.row(c))));
        }
        centers = std::move(next);
        if (shift < options.tolerance) {
            ++iter;
            break;
        }
    }

    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double d = sq_dist(x.row(i), centers.row(c));
            if (d < best) {
                best = d;
                labels[i] = c;
            }
        }
        inertia += best;
    }
    return {std::move(centers), std::move(labels), inertia, iter};
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options) {
    if (k == 0 || k > points.rows()) {
        throw ParameterError("kmeans: K=" + std::to_string(k) + " with N=" +
                             std::to_string(points.rows()));
    }
    std::mt19937_64 rng(seed);
    KMeansResult best;
    const std::size_t runs = std::max<std::size_t>(1, options.restarts);
    for (std::size_t r = 0; r < runs; ++r) {
        KMeansResult res = kmeans_once(points, k, rng, options);
        if (r == 0 || res.inertia < best.inertia) {
            best = std::move(res);
        }
    }
    return best;
}

}  // namespace fimc
