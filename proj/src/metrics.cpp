#include "fimc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fimc/errors.hpp"
#include "fimc/hungarian.hpp"
#include "fimc/matrix.hpp"

namespace fimc {

namespace {

std::vector<std::size_t> compact(std::span<const std::size_t> labels, std::size_t& classes) {
    std::map<std::size_t, std::size_t> ids;
    for (std::size_t l : labels) {
        ids.emplace(l, 0);
    }
    std::size_t next = 0;
    for (auto& [label, id] : ids) {
        id = next++;
    }
    classes = next;
    std::vector<std::size_t> out;
    out.reserve(labels.size());
    for (std::size_t l : labels) {
        out.push_back(ids[l]);
    }
    return out;
}

void check_inputs(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    if (pred.empty() || truth.empty()) {
        throw ParameterError("clustering metric: empty label vector");
    }
    if (pred.size() != truth.size()) {
        throw ParameterError("clustering metric: " + std::to_string(pred.size()) +
                             " predictions for " + std::to_string(truth.size()) + " labels");
    }
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

ContingencyTable ContingencyTable::build(std::span<const std::size_t> pred,
                                         std::span<const std::size_t> truth) {
    check_inputs(pred, truth);
    std::size_t kp = 0, kt = 0;
    const auto p = compact(pred, kp);
    const auto t = compact(truth, kt);
    ContingencyTable table;
    table.counts.assign(kp, std::vector<std::size_t>(kt, 0));
    for (std::size_t i = 0; i < p.size(); ++i) {
        ++table.counts[p[i]][t[i]];
    }
    table.total = p.size();
    return table;
}

double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    const auto table = ContingencyTable::build(pred, truth);
    const std::size_t kp = table.counts.size(), kt = table.counts.front().size();
    std::size_t peak = 0;
    for (const auto& row : table.counts) {
        peak = std::max(peak, *std::max_element(row.begin(), row.end()));
    }
    Matrix cost(kp, kt);
    for (std::size_t i = 0; i < kp; ++i) {
        for (std::size_t j = 0; j < kt; ++j) {
            cost(i, j) = static_cast<double>(peak - table.counts[i][j]);
        }
    }
    const auto match = solve_assignment(cost);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < kp; ++i) {
        if (match[i] >= 0) {
            hit += table.counts[i][static_cast<std::size_t>(match[i])];
        }
    }
    return static_cast<double>(hit) / static_cast<double>(table.total);
}

double nmi(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    const auto table = ContingencyTable::build(pred, truth);
    const double n = static_cast<double>(table.total);
    const std::size_t kp = table.counts.size(), kt = table.counts.front().size();
    std::vector<double> rp(kp, 0.0), ct(kt, 0.0);
    for (std::size_t i = 0; i < kp; ++i) {
        for (std::size_t j = 0; j < kt; ++j) {
            rp[i] += static_cast<double>(table.counts[i][j]);
            ct[j] += static_cast<double>(table.counts[i][j]);
        }
    }
    auto entropy = [n](const std::vector<double>& c) {
        double h = 0.0;
        for (double v : c) {
            if (v > 0.0) {
                h -= (v / n) * std::log(v / n);
            }
        }
        return h;
    };
    const double hp = entropy(rp), ht = entropy(ct);
    if (hp == 0.0 || ht == 0.0) {
        // Only two single-cluster partitions are identical here.
        return (kp == 1 && kt == 1) ? 1.0 : 0.0;
    }
    double mi = 0.0;
    for (std::size_t i = 0; i < kp; ++i) {
        for (std::size_t j = 0; j < kt; ++j) {
            const double c = static_cast<double>(table.counts[i][j]);
            if (c > 0.0) {
                mi += (c / n) * std::log(c * n / (rp[i] * ct[j]));
            }
        }
    }
    return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

double ari(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    const auto table = ContingencyTable::build(pred, truth);
    const double n = static_cast<double>(table.total);
    const std::size_t kp = table.counts.size(), kt = table.counts.front().size();
    double index = 0.0;
    std::vector<double> rp(kp, 0.0), ct(kt, 0.0);
    for (std::size_t i = 0; i < kp; ++i) {
        for (std::size_t j = 0; j < kt; ++j) {
            const double c = static_cast<double>(table.counts[i][j]);
            index += choose2(c);
            rp[i] += c;
            ct[j] += c;
        }
    }
    double sum_a = 0.0, sum_b = 0.0;
    for (double v : rp) {
        sum_a += choose2(v);
    }
    for (double v : ct) {
        sum_b += choose2(v);
    }
    const double pairs = choose2(n);
    const double expected = pairs > 0.0 ? sum_a * sum_b / pairs : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) {
        // Both partitions trivial (all singletons or one cluster each).
        return 1.0;
    }
    return (index - expected) / (max_index - expected);
}

ClusteringScores evaluate(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    return {accuracy(pred, truth), nmi(pred, truth), ari(pred, truth)};
}

}  // namespace fimc
