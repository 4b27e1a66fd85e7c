#include "fimc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "fimc/errors.hpp"

namespace fimc {

namespace fs = std::filesystem;

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)), n - 1);
}

// Fisher-Yates with the portable draw above.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',' || c == ' ' || c == '\t' || c == ';' || c == '\r') {
            if (!cur.empty()) {
                cells.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        cells.push_back(cur);
    }
    return cells;
}

double parse_double(const std::string& cell, const fs::path& file, std::size_t line) {
    double v = 0.0;
    const char* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
        throw LoadError(file.string() + ":" + std::to_string(line) + ": non-numeric cell '" + cell +
                        "'");
    }
    return v;
}

std::vector<std::vector<double>> read_table(const fs::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw LoadError(file.string() + ": cannot open");
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto cells = split_cells(line);
        if (cells.empty()) {
            continue;
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            row.push_back(parse_double(c, file, lineno));
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw LoadError(file.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, found " +
                            std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::size_t> read_integers(const fs::path& file, std::size_t expected_cols) {
    std::ifstream in(file);
    if (!in) {
        throw LoadError(file.string() + ": cannot open");
    }
    std::vector<std::size_t> values;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto cells = split_cells(line);
        if (cells.empty()) {
            continue;
        }
        if (cells.size() != expected_cols) {
            throw LoadError(file.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(expected_cols) + " values, found " +
                            std::to_string(cells.size()));
        }
        for (const auto& c : cells) {
            std::size_t v = 0;
            const char* end = c.data() + c.size();
            auto [ptr, ec] = std::from_chars(c.data(), end, v);
            if (ec != std::errc() || ptr != end) {
                throw LoadError(file.string() + ":" + std::to_string(lineno) +
                                ": expected a non-negative integer, found '" + c + "'");
            }
            values.push_back(v);
        }
    }
    return values;
}

fs::path view_file(const fs::path& dir, std::size_t m) {
    return dir / ("view_" + std::to_string(m) + ".csv");
}

}  // namespace

std::vector<std::size_t> ViewDataset::missing_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < present.size(); ++i) {
        if (!present[i]) {
            idx.push_back(i);
        }
    }
    return idx;
}

std::size_t MultiViewData::complete_samples() const {
    std::size_t count = 0;
    for (std::size_t i = 0; i < samples(); ++i) {
        bool all = true;
        for (const auto& v : views) {
            all = all && v.present[i];
        }
        count += all ? 1 : 0;
    }
    return count;
}

void standardize(ViewDataset& view) {
    const std::size_t n = view.x.rows(), d = view.x.cols();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!view.present[i]) {
            continue;
        }
        ++count;
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += view.x(i, j);
        }
    }
    if (count == 0) {
        return;
    }
    for (double& m : mean) {
        m /= static_cast<double>(count);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!view.present[i]) {
            continue;
        }
        for (std::size_t j = 0; j < d; ++j) {
            const double c = view.x(i, j) - mean[j];
            var[j] += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(count));
        const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (view.present[i]) {
                view.x(i, j) = (view.x(i, j) - mean[j]) * scale;
            }
        }
    }
    zero_fill(view);
}

void zero_fill(ViewDataset& view) {
    for (std::size_t i = 0; i < view.x.rows(); ++i) {
        if (!view.present[i]) {
            std::fill(view.x.row(i).begin(), view.x.row(i).end(), 0.0);
        }
    }
}

Labels read_labels(const fs::path& file) { return read_integers(file, 1); }

void write_labels(const fs::path& file, const Labels& labels) {
    std::ofstream out(file);
    if (!out) {
        throw LoadError(file.string() + ": cannot open for writing");
    }
    for (std::size_t l : labels) {
        out << l << '\n';
    }
}

MultiViewData load_views(const fs::path& directory) {
    if (!fs::is_directory(directory)) {
        throw LoadError(directory.string() + ": not a directory");
    }
    MultiViewData data;
    for (std::size_t m = 0; fs::exists(view_file(directory, m)); ++m) {
        const fs::path file = view_file(directory, m);
        const auto rows = read_table(file);
        if (rows.empty()) {
            throw LoadError(file.string() + ": no data rows");
        }
        if (!data.views.empty() && rows.size() != data.samples()) {
            throw LoadError(file.string() + ": " + std::to_string(rows.size()) + " rows, expected " +
                            std::to_string(data.samples()));
        }
        ViewDataset v;
        v.view_id = m;
        v.x = Matrix(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(rows[i].begin(), rows[i].end(), v.x.row(i).begin());
        }
        v.present.assign(rows.size(), true);
        data.views.push_back(std::move(v));
    }
    if (data.views.empty()) {
        throw LoadError(directory.string() + ": no view_0.csv found");
    }
    for (const auto& entry : fs::directory_iterator(directory)) {
        const std::string name = entry.path().filename().string();
        std::size_t index = 0;
        if (name.starts_with("view_") && name.ends_with(".csv")) {
            const char* first = name.data() + 5;
            const char* last = name.data() + name.size() - 4;
            auto [ptr, ec] = std::from_chars(first, last, index);
            if (ec == std::errc() && ptr == last && index > data.views.size()) {
                throw LoadError(view_file(directory, data.views.size()).string() +
                                ": missing, but " + name + " exists");
            }
        }
    }
    const std::size_t n = data.samples(), m = data.views.size();

    const fs::path mask_file = directory / "mask.csv";
    if (fs::exists(mask_file)) {
        const auto flags = read_integers(mask_file, m);
        if (flags.size() != n * m) {
            throw LoadError(mask_file.string() + ": " + std::to_string(flags.size() / m) +
                            " rows, expected " + std::to_string(n));
        }
        for (std::size_t i = 0; i < n; ++i) {
            bool any = false;
            for (std::size_t v = 0; v < m; ++v) {
                const std::size_t f = flags[i * m + v];
                if (f > 1) {
                    throw LoadError(mask_file.string() + ":" + std::to_string(i + 1) +
                                    ": flags must be 0 or 1");
                }
                data.views[v].present[i] = f == 1;
                any = any || f == 1;
            }
            if (!any) {
                throw LoadError(mask_file.string() + ":" + std::to_string(i + 1) +
                                ": sample has no present view");
            }
        }
    }
    const fs::path labels_file = directory / "labels.csv";
    if (fs::exists(labels_file)) {
        auto labels = read_integers(labels_file, 1);
        if (labels.size() != n) {
            throw LoadError(labels_file.string() + ": " + std::to_string(labels.size()) +
                            " labels, expected " + std::to_string(n));
        }
        data.labels = std::move(labels);
    }
    for (auto& v : data.views) {
        standardize(v);
    }
    return data;
}

void save_views(const fs::path& directory, const MultiViewData& data) {
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) {
        throw LoadError(directory.string() + ": cannot create directory: " + ec.message());
    }
    auto open = [](const fs::path& p) {
        std::ofstream out(p);
        if (!out) {
            throw LoadError(p.string() + ": cannot open for writing");
        }
        out << std::setprecision(17);
        return out;
    };
    for (const auto& v : data.views) {
        auto out = open(view_file(directory, v.view_id));
        for (std::size_t i = 0; i < v.x.rows(); ++i) {
            const auto r = v.x.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) {
                out << (j ? "," : "") << r[j];
            }
            out << '\n';
        }
    }
    if (data.labels) {
        auto out = open(directory / "labels.csv");
        for (std::size_t l : *data.labels) {
            out << l << '\n';
        }
    }
    if (data.complete_samples() != data.samples()) {
        auto out = open(directory / "mask.csv");
        for (std::size_t i = 0; i < data.samples(); ++i) {
            for (std::size_t m = 0; m < data.views.size(); ++m) {
                out << (m ? " " : "") << (data.views[m].present[i] ? 1 : 0);
            }
            out << '\n';
        }
    }
}

std::vector<double> dirichlet_shares(double alpha, std::size_t views, std::uint64_t seed) {
    if (!(alpha > 0.0)) {
        throw ParameterError("dirichlet: alpha must be positive, got " + std::to_string(alpha));
    }
    if (views == 0) {
        throw ParameterError("dirichlet: need at least one view");
    }
    std::mt19937_64 rng(seed);
    // Gamma(a) = Gamma(a + 1) * U^(1/a), evaluated in log space so tiny alphas
    // do not underflow to an all-zero draw.
    std::gamma_distribution<double> gamma(alpha + 1.0, 1.0);
    std::vector<double> logs(views);
    for (double& l : logs) {
        const double g = gamma(rng);
        const double u = std::max(uniform01(rng), std::numeric_limits<double>::min());
        l = std::log(g) + std::log(u) / alpha;
    }
    const double peak = *std::max_element(logs.begin(), logs.end());
    double total = 0.0;
    for (double& l : logs) {
        l = std::exp(l - peak);
        total += l;
    }
    for (double& l : logs) {
        l /= total;
    }
    return logs;
}

std::vector<std::size_t> dirichlet_allocate(double alpha, std::size_t views, std::size_t slots,
                                            std::uint64_t seed) {
    const auto shares = dirichlet_shares(alpha, views, seed);
    std::vector<std::size_t> counts(views);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t m = 0; m < views; ++m) {
        const double exact = shares[m] * static_cast<double>(slots);
        counts[m] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[m];
        remainders.emplace_back(exact - std::floor(exact), m);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < slots; ++i, ++assigned) {
        ++counts[remainders[i % views].second];
    }
    return counts;
}

MultiViewData apply_missing(MultiViewData data, const MissingSpec& spec) {
    if (spec.rate < 0.0 || spec.rate >= 1.0) {
        throw ParameterError("apply_missing: missing rate must lie in [0, 1), got " +
                             std::to_string(spec.rate));
    }
    const std::size_t n = data.samples(), m = data.views.size();
    const auto complete = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - spec.rate)));
    const std::size_t incomplete = n - std::min(complete, n);
    if (incomplete == 0) {
        return data;
    }
    if (m < 2) {
        throw ParameterError("apply_missing: need at least 2 views to simulate missing data");
    }
    std::mt19937_64 rng(spec.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(incomplete));
    std::sort(chosen.begin(), chosen.end());

    std::vector<std::size_t> losses(incomplete);
    for (auto& l : losses) {
        const double draw = 1.0 + uniform01(rng) * static_cast<double>(m - 2);
        l = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(draw)), 1, m - 1);
    }

    std::vector<std::vector<std::size_t>> dropped(incomplete);
    if (!spec.dirichlet_alpha) {
        for (std::size_t s = 0; s < incomplete; ++s) {
            std::vector<std::size_t> v(m);
            std::iota(v.begin(), v.end(), 0);
            shuffle(v, rng);
            dropped[s].assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(losses[s]));
        }
    } else {
        const std::size_t slots = std::accumulate(losses.begin(), losses.end(), std::size_t{0});
        auto target = dirichlet_allocate(*spec.dirichlet_alpha, m, slots, rng());
        // A view can lose each sample at most once; spill overflow to the views
        // with the most spare capacity.
        std::size_t overflow = 0;
        for (auto& c : target) {
            if (c > incomplete) {
                overflow += c - incomplete;
                c = incomplete;
            }
        }
        while (overflow > 0) {
            std::size_t best = 0;
            for (std::size_t v = 1; v < m; ++v) {
                if (incomplete - target[v] > incomplete - target[best]) {
                    best = v;
                }
            }
            ++target[best];
            --overflow;
        }
        // Largest-demand samples first, each takes the views with the most
        // remaining quota (ties to the lowest view index).
        std::vector<std::size_t> by_loss(incomplete);
        std::iota(by_loss.begin(), by_loss.end(), 0);
        std::stable_sort(by_loss.begin(), by_loss.end(),
                         [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
        for (std::size_t s : by_loss) {
            std::vector<std::size_t> v(m);
            std::iota(v.begin(), v.end(), 0);
            std::stable_sort(v.begin(), v.end(),
                             [&](std::size_t a, std::size_t b) { return target[a] > target[b]; });
            for (std::size_t j = 0; j < losses[s]; ++j) {
                dropped[s].push_back(v[j]);
                if (target[v[j]] > 0) {
                    --target[v[j]];
                }
            }
        }
    }
    for (std::size_t s = 0; s < incomplete; ++s) {
        for (std::size_t v : dropped[s]) {
            data.views[v].present[chosen[s]] = false;
        }
    }
    for (auto& v : data.views) {
        zero_fill(v);
    }
    return data;
}

MultiViewData synth_blobs(const SynthSpec& spec) {
    if (spec.clusters == 0 || spec.clusters > spec.samples) {
        throw ParameterError("synth_blobs: need 1 <= K <= N");
    }
    if (spec.dims.empty()) {
        throw ParameterError("synth_blobs: need at least one view");
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = spec.samples, k = spec.clusters;
    const std::size_t latent = std::max<std::size_t>(k, 2);

    Labels labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = i % k;
    }
    shuffle(labels, rng);

    MultiViewData data;
    for (std::size_t m = 0; m < spec.dims.size(); ++m) {
        const std::size_t d = spec.dims[m];
        Matrix embed(latent, d);
        for (double& v : embed.data()) {
            v = normal(rng) / std::sqrt(static_cast<double>(latent));
        }
        Matrix z(n, latent);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < latent; ++j) {
                z(i, j) = normal(rng) + (j == labels[i] ? spec.separation : 0.0);
            }
        }
        ViewDataset v;
        v.view_id = m;
        v.x = matmul(z, embed);
        v.present.assign(n, true);
        data.views.push_back(std::move(v));
    }
    data.labels = std::move(labels);
    return data;
}

}  // namespace fimc
