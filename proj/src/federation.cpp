#include "fimc/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <thread>

#include <json.hpp>

#include "fimc/errors.hpp"
#include "fimc/message.hpp"

namespace fimc {

namespace {

// Same category, new message.
[[noreturn]] void rethrow_with(const std::exception& e, const std::string& prefix) {
    const std::string msg = prefix + ": " + e.what();
    if (dynamic_cast<const TrainingError*>(&e) != nullptr) {
        throw TrainingError(msg, static_cast<const TrainingError&>(e).trace());
    }
    if (dynamic_cast<const ShapeError*>(&e) != nullptr) throw ShapeError(msg);
    if (dynamic_cast<const ParameterError*>(&e) != nullptr) throw ParameterError(msg);
    if (dynamic_cast<const NumericError*>(&e) != nullptr) throw NumericError(msg);
    if (dynamic_cast<const DegenerateError*>(&e) != nullptr) throw DegenerateError(msg);
    if (dynamic_cast<const ProtocolError*>(&e) != nullptr) throw ProtocolError(msg);
    if (dynamic_cast<const LoadError*>(&e) != nullptr) throw LoadError(msg);
    if (dynamic_cast<const ConfigError*>(&e) != nullptr) throw ConfigError(msg);
    throw Error(msg);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

RoundRecord make_record(std::string phase, std::size_t round) {
    RoundRecord r;
    r.phase = std::move(phase);
    r.round = round;
    return r;
}

RoundMessage over_the_wire(const RoundMessage& msg) { return decode(encode(msg)); }

class Client {
public:
    Client(const ViewDataset& view, const SessionConfig& config, std::size_t id)
        : id_(id),
          config_(config),
          x_(view.x),
          present_(view.present),
          missing_(view.missing_indices()),
          model_(ModelDims{view.dim(), config.hidden_dim, config.feature_dim, config.mlp_width,
                           config.gcn_layers, config.clusters},
                 config.ablation, mix(config.seed, 1000 + id)) {}

    RoundMessage pretrain() {
        const AdjacencyGraph local = build_local_graph(x_, present_, config_.k_neighbors);
        const PretrainResult r = fimc::pretrain(model_, x_, local, config_.pretrain_epochs,
                                                config_.k_neighbors, config_.adam, config_.bandwidth);
        summary_ = ClientSummary{};
        summary_.client = id_;
        if (!r.trace.empty()) {
            summary_.first_total = r.trace.front();
            summary_.last.graph = r.trace.back();
            summary_.last.total = r.trace.back();
        }
        RoundMessage msg;
        msg.round = 0;
        msg.client = static_cast<std::uint16_t>(id_);
        // No silhouettes yet. Present rows weigh 1; absent rows carry only the
        // shared embedding of a zero input and would pull each other together
        // in the fused graph, so they weigh 0.
        std::vector<double> weights(x_.rows(), 1.0);
        for (std::size_t i : missing_) {
            weights[i] = 0.0;
        }
        msg.payload = ClientUpload{r.local_hidden, std::move(weights)};
        return msg;
    }

    RoundMessage train(const RoundMessage& incoming, std::uint32_t round) {
        const auto& down = std::get<ServerBroadcast>(incoming.payload);
        TrainInputs in;
        in.x = x_;
        in.present = present_;
        in.fused = AdjacencyGraph::from_matrix(down.fused_graph, config_.k_neighbors);
        in.local = local_graph(in.fused);
        if (down.centers.rows() > 0) {
            in.global_centers = down.centers;
        }
        if (down.pseudo_labels.rows() > 0) {
            in.pseudo_labels = down.pseudo_labels;
        }
        TrainSettings s;
        s.epochs = config_.epochs;
        s.weights = config_.weights;
        s.adam = config_.adam;
        s.bandwidth = config_.bandwidth;
        s.round = round;
        s.client = id_;
        s.seed = mix(config_.seed, 2000 + id_);
        s.kmeans.restarts = config_.kmeans_restarts;
        TrainResult r = train_round(model_, in, s);
        x_ = std::move(r.x);
        reconstructed_ = true;
        summary_ = ClientSummary{};
        summary_.client = id_;
        if (!r.trace.empty()) {
            summary_.first_total = r.trace.front().total;
            summary_.last = r.trace.back();
        }
        summary_.degenerate_silhouette = r.degenerate_silhouette;
        RoundMessage msg;
        msg.round = round;
        msg.client = static_cast<std::uint16_t>(id_);
        msg.payload = ClientUpload{std::move(r.output.features), std::move(r.output.weights)};
        return msg;
    }

    const ClientSummary& summary() const noexcept { return summary_; }

private:
    // Rebuilt from the current inputs each round; absent rows join once they
    // have been reconstructed. Their rows then come from the fused graph.
    AdjacencyGraph local_graph(const AdjacencyGraph& fused) const {
        const std::vector<bool> all(x_.rows(), true);
        const AdjacencyGraph local =
            build_local_graph(x_, reconstructed_ ? all : present_, config_.k_neighbors);
        const Ablation a = config_.ablation;
        if (a == Ablation::no_migration || a == Ablation::no_global_head) {
            return clear_rows(local, missing_);
        }
        return migrate_global_structure(local, fused, missing_);
    }

    std::size_t id_;
    const SessionConfig& config_;
    Matrix x_;
    std::vector<bool> present_;  // frozen at session start
    std::vector<std::size_t> missing_;
    ClientModel model_;
    bool reconstructed_ = false;
    ClientSummary summary_;
};

}  // namespace

void SessionConfig::validate(const MultiViewData& data) const {
    const std::size_t n = data.samples();
    if (data.views.empty() || n == 0) {
        throw ConfigError("session: no views or no samples");
    }
    if (clusters < 2 || clusters > n) {
        throw ConfigError("session: clusters must lie in [2, " + std::to_string(n) + "], got " +
                          std::to_string(clusters));
    }
    if (k_neighbors == 0) {
        throw ConfigError("session: k_neighbors must be at least 1");
    }
    if (!(weights.gamma1 >= 0.0) || !(weights.gamma2 >= 0.0)) {
        throw ConfigError("session: gamma1 and gamma2 must be non-negative");
    }
    if (!(adam.learning_rate > 0.0)) {
        throw ConfigError("session: learning rate must be positive");
    }
    if (hidden_dim == 0 || feature_dim == 0 || mlp_width == 0 || gcn_layers == 0) {
        throw ConfigError("session: layer sizes must be positive");
    }
    if (data.views.size() > 0xffff) {
        throw ConfigError("session: too many clients");
    }
    for (const ViewDataset& v : data.views) {
        if (v.samples() != n || v.present.size() != n) {
            throw ConfigError("session: view " + std::to_string(v.view_id) +
                              " is not row-aligned with view 0");
        }
        const auto present = static_cast<std::size_t>(std::count(v.present.begin(), v.present.end(), true));
        if (present <= k_neighbors) {
            throw ConfigError("session: view " + std::to_string(v.view_id) + " has " +
                              std::to_string(present) + " present samples, need more than k = " +
                              std::to_string(k_neighbors));
        }
    }
    if (data.labels && data.labels->size() != n) {
        throw ConfigError("session: " + std::to_string(data.labels->size()) + " labels for " +
                          std::to_string(n) + " samples");
    }
}

void run_clients_parallel(std::size_t count, std::size_t workers,
                          const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(count);
    auto guarded = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            guarded(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    guarded(i);
                }
            });
        }
    }
    for (std::size_t i = 0; i < count; ++i) {
        if (!errors[i]) {
            continue;
        }
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            rethrow_with(e, "client " + std::to_string(i));
        } catch (...) {
            throw Error("client " + std::to_string(i) + ": unknown failure");
        }
    }
}

std::string RoundRecord::to_json(bool with_timing) const {
    nlohmann::ordered_json j;
    j["phase"] = phase;
    j["round"] = round;
    nlohmann::ordered_json cl = nlohmann::ordered_json::array();
    for (const ClientSummary& c : clients) {
        nlohmann::ordered_json e;
        e["client"] = c.client;
        e["first_total"] = c.first_total;
        e["total"] = c.last.total;
        e["clustering"] = c.last.clustering;
        e["underlying"] = c.last.underlying;
        e["consistent"] = c.last.consistent;
        e["reconstruction"] = c.last.reconstruction;
        e["degenerate_silhouette"] = c.degenerate_silhouette;
        cl.push_back(std::move(e));
    }
    j["clients"] = std::move(cl);
    j["view_means"] = view_means;
    j["view_weights"] = view_weights;
    if (scores) {
        j["acc"] = scores->acc;
        j["nmi"] = scores->nmi;
        j["ari"] = scores->ari;
    }
    if (with_timing) {
        j["seconds"] = seconds;
    }
    return j.dump();
}

SessionResult run_session(const SessionConfig& config, const MultiViewData& data,
                          const RecordSink& sink) {
    config.validate(data);
    const std::size_t m = data.views.size();
    std::size_t workers = config.workers;
    if (workers == 0) {
        workers = std::max<unsigned>(1, std::thread::hardware_concurrency());
    }

    std::vector<Client> clients;
    clients.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        clients.emplace_back(data.views[i], config, i);
    }

    ServerConfig sc;
    sc.clients = m;
    sc.clusters = config.clusters;
    sc.k_neighbors = config.k_neighbors;
    sc.seed = mix(config.seed, 3000);
    sc.bandwidth = config.bandwidth;
    sc.kmeans.restarts = config.kmeans_restarts;
    Server server(sc);

    SessionResult result;
    std::vector<RoundMessage> uploads(m);
    auto emit = [&](RoundRecord rec, const GlobalState& state,
                    std::chrono::steady_clock::time_point start) {
        for (const Client& c : clients) {
            rec.clients.push_back(c.summary());
        }
        rec.view_means = state.view_means;
        rec.view_weights = state.view_weights;
        if (data.labels) {
            rec.scores = evaluate(state.labels, *data.labels);
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (sink) {
            sink(rec);
        }
        result.records.push_back(std::move(rec));
    };

    auto start = std::chrono::steady_clock::now();
    try {
        run_clients_parallel(m, workers,
                             [&](std::size_t i) { uploads[i] = over_the_wire(clients[i].pretrain()); });
    } catch (const std::exception& e) {
        rethrow_with(e, "pretraining");
    }
    AggregateResult agg;
    try {
        agg = server.aggregate(uploads, 0, false);
    } catch (const std::exception& e) {
        rethrow_with(e, "pretraining, server");
    }
    emit(make_record("pretrain", 0), agg.state, start);

    // Round 0 is pretraining; communication rounds count from 1.
    for (std::size_t t = 1; t <= config.rounds; ++t) {
        start = std::chrono::steady_clock::now();
        const auto round = static_cast<std::uint32_t>(t);
        const std::vector<RoundMessage> downs = std::move(agg.broadcasts);
        try {
            run_clients_parallel(m, workers, [&](std::size_t i) {
                uploads[i] = over_the_wire(clients[i].train(over_the_wire(downs[i]), round));
            });
        } catch (const std::exception& e) {
            rethrow_with(e, "round " + std::to_string(t));
        }
        try {
            agg = server.aggregate(uploads, round, true);
        } catch (const std::exception& e) {
            rethrow_with(e, "round " + std::to_string(t) + ", server");
        }
        emit(make_record("round", t), agg.state, start);
    }

    result.labels = agg.state.labels;
    result.final_state = std::move(agg.state);
    return result;
}

}  // namespace fimc
