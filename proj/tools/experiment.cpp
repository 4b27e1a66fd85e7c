#include "experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fimc/errors.hpp"

namespace fimc::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw ConfigError(key + ": cannot parse '" + text + "'");
    }
    return v;
}

double parse_real(const std::string& key, const std::string& text) {
    const auto v = parse_number<double>(key, text);
    if (!std::isfinite(v)) {
        throw ConfigError(key + ": value must be finite");
    }
    return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
    return parse_number<std::size_t>(key, text);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(trim(item));
    }
    return out;
}

std::vector<double> parse_reals(const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        out.push_back(parse_real(key, item));
    }
    if (out.empty()) {
        throw ConfigError(key + ": empty list");
    }
    return out;
}

std::string strip_quotes(const std::string& v) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
        return v.substr(1, v.size() - 2);
    }
    return v;
}

std::string number_text(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

void apply_setting(ExperimentConfig& c, const std::string& raw_key, const std::string& raw_value) {
    std::string key = trim(raw_key);
    std::replace(key.begin(), key.end(), '-', '_');
    const std::string value = strip_quotes(trim(raw_value));
    SessionConfig& s = c.session;

    if (key == "data_dir") {
        c.data_dir = fs::path(value);
    } else if (key == "out") {
        c.out = value;
    } else if (key == "seed") {
        s.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "missing_rate") {
        c.missing_rates = parse_reals(key, value);
        for (double r : c.missing_rates) {
            if (r < 0.0 || r >= 1.0) {
                throw ConfigError("missing_rate: " + value + " outside [0, 1)");
            }
        }
    } else if (key == "dirichlet_alpha") {
        c.dirichlet_alpha = parse_real(key, value);
        if (*c.dirichlet_alpha <= 0.0) {
            throw ConfigError("dirichlet_alpha: must be positive");
        }
    } else if (key == "rounds") {
        s.rounds = parse_count(key, value);
    } else if (key == "epochs") {
        s.epochs = parse_count(key, value);
    } else if (key == "pretrain_epochs") {
        s.pretrain_epochs = parse_count(key, value);
    } else if (key == "k_neighbors") {
        s.k_neighbors = parse_count(key, value);
    } else if (key == "gamma1") {
        c.gamma1 = parse_reals(key, value);
    } else if (key == "gamma2") {
        c.gamma2 = parse_reals(key, value);
    } else if (key == "learning_rate") {
        s.adam.learning_rate = parse_real(key, value);
    } else if (key == "clusters") {
        s.clusters = parse_count(key, value);
        c.clusters_set = true;
    } else if (key == "hidden_dim") {
        s.hidden_dim = parse_count(key, value);
    } else if (key == "feature_dim") {
        s.feature_dim = parse_count(key, value);
    } else if (key == "mlp_width") {
        s.mlp_width = parse_count(key, value);
    } else if (key == "gcn_layers") {
        s.gcn_layers = parse_count(key, value);
    } else if (key == "ablation") {
        try {
            s.ablation = parse_ablation(value);
        } catch (const Error& e) {
            throw ConfigError(std::string("ablation: ") + e.what());
        }
    } else if (key == "repeats") {
        c.repeats = parse_count(key, value);
        if (c.repeats == 0) {
            throw ConfigError("repeats: must be at least 1");
        }
    } else if (key == "workers") {
        s.workers = parse_count(key, value);
    } else if (key == "kmeans_restarts") {
        s.kmeans_restarts = std::max<std::size_t>(1, parse_count(key, value));
    } else if (key == "bandwidth") {
        s.bandwidth = parse_real(key, value);
    } else if (key == "synth_samples") {
        c.synth.samples = parse_count(key, value);
    } else if (key == "synth_clusters") {
        c.synth.clusters = parse_count(key, value);
    } else if (key == "synth_dims") {
        c.synth.dims.clear();
        for (const auto& item : split_list(value)) {
            c.synth.dims.push_back(parse_count(key, item));
        }
    } else if (key == "synth_separation") {
        c.synth.separation = parse_real(key, value);
    } else {
        throw ConfigError("unknown key '" + trim(raw_key) + "'");
    }
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        try {
            apply_setting(c, line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

ExperimentConfig load_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw ConfigError(file.string() + ": cannot open");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), file.string());
}

Stat summarize(const std::vector<double>& values) {
    Stat s;
    if (values.empty()) {
        return s;
    }
    for (double v : values) {
        s.mean += v;
    }
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - s.mean) * (v - s.mean);
        }
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

std::string format_row(const SweepRow& row, Ablation ablation) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << "missing_rate=" << row.missing_rate
       << " gamma1=" << row.gamma1 << " gamma2=" << row.gamma2
       << " ablation=" << to_string(ablation) << " repeats=" << row.repeats;
    if (row.scored) {
        os << " ACC=" << row.acc.mean << "+-" << row.acc.std << " NMI=" << row.nmi.mean << "+-"
           << row.nmi.std << " ARI=" << row.ari.mean << "+-" << row.ari.std;
    } else {
        os << " (no ground truth)";
    }
    return os.str();
}

std::vector<SweepRow> run_experiment(const ExperimentConfig& config, std::ostream& report) {
    std::error_code ec;
    fs::create_directories(config.out / "predictions", ec);
    if (ec) {
        throw ConfigError(config.out.string() + ": cannot create output directory: " + ec.message());
    }
    std::ofstream records(config.out / "rounds.jsonl");
    std::ofstream summary(config.out / "summary.csv");
    if (!records || !summary) {
        throw ConfigError(config.out.string() + ": cannot open output files");
    }
    summary << "missing_rate,gamma1,gamma2,ablation,repeats,acc_mean,acc_std,nmi_mean,nmi_std,"
               "ari_mean,ari_std\n";
    summary << std::setprecision(17);

    std::optional<MultiViewData> loaded;
    if (config.data_dir) {
        loaded = load_views(*config.data_dir);
    }
    const std::vector<double> rates =
        config.missing_rates.empty() ? std::vector<double>{-1.0} : config.missing_rates;

    std::vector<SweepRow> rows;
    for (double rate : rates) {
        for (double g1 : config.gamma1) {
            for (double g2 : config.gamma2) {
                SweepRow row;
                row.missing_rate = rate;
                row.gamma1 = g1;
                row.gamma2 = g2;
                row.repeats = config.repeats;
                std::vector<double> acc, nmi, ari;
                for (std::size_t r = 0; r < config.repeats; ++r) {
                    const std::uint64_t seed = config.session.seed + r;
                    MultiViewData data;
                    if (loaded) {
                        data = *loaded;
                    } else {
                        SynthSpec spec = config.synth;
                        spec.seed = seed;
                        data = synth_blobs(spec);
                    }
                    if (rate >= 0.0) {
                        data = apply_missing(std::move(data), {rate, seed, config.dirichlet_alpha});
                    }
                    row.missing_rate = 1.0 - static_cast<double>(data.complete_samples()) /
                                                 static_cast<double>(data.samples());
                    SessionConfig s = config.session;
                    s.seed = seed;
                    s.weights = {g1, g2};
                    if (!config.clusters_set) {
                        if (data.labels) {
                            s.clusters = std::set<std::size_t>(data.labels->begin(), data.labels->end()).size();
                        } else if (!loaded) {
                            s.clusters = config.synth.clusters;
                        } else {
                            throw ConfigError("clusters: not set and the data has no labels");
                        }
                    }
                    auto sink = [&](const RoundRecord& rec) {
                        auto j = nlohmann::ordered_json::parse(rec.to_json(true));
                        j["missing_rate"] = row.missing_rate;
                        j["gamma1"] = g1;
                        j["gamma2"] = g2;
                        j["repeat"] = r;
                        records << j.dump() << '\n';
                    };
                    const SessionResult res = run_session(s, data, sink);
                    std::ostringstream name;
                    name << "rate" << number_text(row.missing_rate) << "_g1-" << number_text(g1) << "_g2-"
                         << number_text(g2) << "_rep" << r << ".csv";
                    write_labels(config.out / "predictions" / name.str(), res.labels);
                    if (data.labels) {
                        const ClusteringScores sc = evaluate(res.labels, *data.labels);
                        acc.push_back(sc.acc);
                        nmi.push_back(sc.nmi);
                        ari.push_back(sc.ari);
                    }
                }
                row.scored = !acc.empty();
                row.acc = summarize(acc);
                row.nmi = summarize(nmi);
                row.ari = summarize(ari);
                summary << number_text(row.missing_rate) << ',' << number_text(g1) << ','
                        << number_text(g2) << ','
                        << to_string(config.session.ablation) << ',' << row.repeats << ',';
                if (row.scored) {
                    summary << row.acc.mean << ',' << row.acc.std << ',' << row.nmi.mean << ','
                            << row.nmi.std << ',' << row.ari.mean << ',' << row.ari.std << '\n';
                } else {
                    summary << ",,,,,\n";
                }
                report << format_row(row, config.session.ablation) << std::endl;
                rows.push_back(row);
            }
        }
    }
    return rows;
}

}  // namespace fimc::cli
