#include "fimc/client.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace fimc {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_migration: return "no-migration";
        case Ablation::no_fusion_module: return "no-fusion-module";
        case Ablation::no_global_guidance: return "no-global-guidance";
        case Ablation::no_global_head: return "no-global-head";
    }
    return "none";
}

Ablation parse_ablation(const std::string& name) {
    for (Ablation a : {Ablation::none, Ablation::no_migration, Ablation::no_fusion_module,
                       Ablation::no_global_guidance, Ablation::no_global_head}) {
        if (to_string(a) == name) {
            return a;
        }
    }
    throw ParameterError("unknown ablation '" + name + "'");
}

namespace {

Matrix glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (double& v : w.data()) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = (2.0 * u - 1.0) * limit;
    }
    return w;
}

std::string describe(const LossBreakdown& b) {
    std::ostringstream os;
    os << "L_c=" << b.clustering << " L_u=" << b.underlying << " L_d=" << b.consistent
       << " L_r=" << b.reconstruction << " L=" << b.total;
    return os.str();
}

std::string context(std::size_t round, std::size_t client) {
    return "round " + std::to_string(round) + ", client " + std::to_string(client);
}

double scalar(Var v) { return v.value()(0, 0); }

// Median heuristic unless a fixed bandwidth is configured.
double pick_bandwidth(double configured, const Matrix& features) {
    return configured > 0.0 ? configured : median_sq_distance(features);
}

}  // namespace

ClientModel::ClientModel(const ModelDims& dims, Ablation ablation, std::uint64_t seed)
    : dims_(dims), ablation_(ablation) {
    if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.feature_dim == 0 || dims.mlp_width == 0 ||
        dims.gcn_layers == 0) {
        throw ParameterError("ClientModel: all layer widths and the layer count must be positive");
    }
    if (dims.clusters < 2) {
        throw ParameterError("ClientModel: need at least 2 clusters");
    }
    std::mt19937_64 rng(seed);
    auto head = [&](std::vector<std::size_t>& ws, std::vector<std::size_t>& bs) {
        std::size_t in = dims.input_dim;
        for (std::size_t l = 0; l < dims.gcn_layers; ++l) {
            ws.push_back(add(glorot(in, dims.hidden_dim, rng)));
            bs.push_back(add(Matrix(1, dims.hidden_dim)));
            in = dims.hidden_dim;
        }
    };
    if (has_global_head()) {
        head(layout_.global_weights, layout_.global_biases);
    }
    head(layout_.local_weights, layout_.local_biases);

    const std::size_t uw = underlying_width();
    if (ablation == Ablation::no_fusion_module) {
        layout_.fusion.push_back(add(glorot(uw, dims.feature_dim, rng)));
        layout_.fusion.push_back(add(Matrix(1, dims.feature_dim)));
    } else {
        layout_.fusion.push_back(add(glorot(uw, dims.mlp_width, rng)));
        layout_.fusion.push_back(add(Matrix(1, dims.mlp_width)));
        layout_.fusion.push_back(add(glorot(dims.mlp_width, dims.feature_dim, rng)));
        layout_.fusion.push_back(add(Matrix(1, dims.feature_dim)));
    }
    layout_.decoder.push_back(add(glorot(uw, dims.mlp_width, rng)));
    layout_.decoder.push_back(add(Matrix(1, dims.mlp_width)));
    layout_.decoder.push_back(add(glorot(dims.mlp_width, dims.input_dim, rng)));
    layout_.decoder.push_back(add(Matrix(1, dims.input_dim)));
    layout_.centers = add(glorot(dims.clusters, dims.feature_dim, rng));
}

std::size_t ClientModel::add(Matrix m) {
    params_.push_back(std::move(m));
    return params_.size() - 1;
}

void ClientModel::set_centers(const Matrix& centers) {
    const Matrix& cur = params_[layout_.centers];
    if (!centers.same_shape(cur)) {
        throw ShapeError("ClientModel::set_centers: expected " + cur.shape_string() + ", got " +
                         centers.shape_string());
    }
    params_[layout_.centers] = centers;
}

std::vector<std::size_t> ClientModel::local_head_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t l = 0; l < layout_.local_weights.size(); ++l) {
        idx.push_back(layout_.local_weights[l]);
        idx.push_back(layout_.local_biases[l]);
    }
    return idx;
}

EncoderInputs EncoderInputs::build(const Matrix& x, const AdjacencyGraph& local,
                                   const AdjacencyGraph* fused) {
    if (local.n() != x.rows()) {
        throw ShapeError("EncoderInputs: local graph n=" + std::to_string(local.n()) + " for " +
                         std::to_string(x.rows()) + " samples");
    }
    EncoderInputs in;
    in.x = x;
    in.local_propagation = normalize_propagation(local);
    in.local_px = matmul(in.local_propagation, x);
    if (fused != nullptr) {
        if (fused->n() != x.rows()) {
            throw ShapeError("EncoderInputs: fused graph n=" + std::to_string(fused->n()) + " for " +
                             std::to_string(x.rows()) + " samples");
        }
        in.global_propagation = normalize_propagation(*fused);
        in.global_px = matmul(in.global_propagation, x);
    }
    return in;
}

namespace {

// Shared layer stack; `px` is the cached P*X of the first layer when available.
Var gcn_stack(std::span<const Var> weights, std::span<const Var> biases, Var x, Var propagation,
              const Var* px) {
    if (weights.size() != biases.size() || weights.empty()) {
        throw ShapeError("gcn_forward: mismatched layer parameter lists");
    }
    Var h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        const Matrix& w = weights[l].value();
        if (h.value().cols() != w.rows()) {
            throw ShapeError("gcn_forward: layer " + std::to_string(l) + " expects width " +
                             std::to_string(w.rows()) + ", got " + h.value().shape_string());
        }
        if (propagation.value().cols() != h.value().rows()) {
            throw ShapeError("gcn_forward: propagation " + propagation.value().shape_string() +
                             " does not match features " + h.value().shape_string());
        }
        Var pre = (l == 0 && px != nullptr) ? ad::matmul(*px, weights[l])
                                            : ad::matmul(propagation, ad::matmul(h, weights[l]));
        Var act = ad::relu(ad::add_row(pre, biases[l]));
        h = (w.rows() == w.cols()) ? ad::add(act, h) : act;
    }
    return h;
}

}  // namespace

Var gcn_forward(std::span<const Var> weights, std::span<const Var> biases, Var x, Var propagation) {
    return gcn_stack(weights, biases, x, propagation, nullptr);
}

Matrix gcn_forward(std::span<const Matrix> weights, std::span<const Matrix> biases, const Matrix& x,
                   const Matrix& propagation) {
    Tape tape;
    std::vector<Var> ws, bs;
    for (const Matrix& w : weights) {
        ws.push_back(tape.constant(w));
    }
    for (const Matrix& b : biases) {
        bs.push_back(tape.constant(b));
    }
    return gcn_forward(ws, bs, tape.constant(x), tape.constant(propagation)).value();
}

std::vector<Var> bind_parameters(Tape& tape, const std::vector<Matrix>& params, bool trainable) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Matrix& p : params) {
        vars.push_back(trainable ? tape.parameter(p) : tape.constant(p));
    }
    return vars;
}

FeatureVars extract_features(const ClientModel& model, std::span<const Var> params,
                             const EncoderInputs& inputs) {
    const auto& lay = model.layout();
    Tape& tape = *params.front().tape();
    auto pick = [&](const std::vector<std::size_t>& idx) {
        std::vector<Var> out;
        for (std::size_t i : idx) {
            out.push_back(params[i]);
        }
        return out;
    };
    if (inputs.x.cols() != model.dims().input_dim) {
        throw ShapeError("extract_features: input " + inputs.x.shape_string() +
                         " does not match model input width " +
                         std::to_string(model.dims().input_dim));
    }
    FeatureVars fv;
    Var x = tape.constant(inputs.x);
    {
        Var prop = tape.constant(inputs.local_propagation);
        Var px = tape.constant(inputs.local_px);
        fv.local_hidden = gcn_stack(pick(lay.local_weights), pick(lay.local_biases), x, prop, &px);
    }
    if (model.has_global_head()) {
        if (inputs.global_propagation.empty()) {
            throw ProtocolError("extract_features: fused graph required by the global head is missing");
        }
        Var prop = tape.constant(inputs.global_propagation);
        Var px = tape.constant(inputs.global_px);
        fv.global_hidden = gcn_stack(pick(lay.global_weights), pick(lay.global_biases), x, prop, &px);
        const Var blocks[] = {fv.global_hidden, fv.local_hidden};
        fv.underlying = ad::concat_cols(blocks);
    } else {
        fv.underlying = fv.local_hidden;
    }

    auto dense = [&](const std::vector<std::size_t>& idx, Var in) {
        Var h = in;
        for (std::size_t l = 0; l + 1 < idx.size(); l += 2) {
            h = ad::add_row(ad::matmul(h, params[idx[l]]), params[idx[l + 1]]);
            if (l + 2 < idx.size()) {
                h = ad::relu(h);
            }
        }
        return h;
    };
    fv.features = dense(lay.fusion, fv.underlying);
    fv.reconstruction = dense(lay.decoder, fv.underlying);
    return fv;
}

ExtractedFeatures extract_features(const ClientModel& model, const EncoderInputs& inputs) {
    Tape tape;
    auto params = bind_parameters(tape, model.parameters(), false);
    FeatureVars fv = extract_features(model, params, inputs);
    ExtractedFeatures out;
    if (fv.global_hidden.valid()) {
        out.global_hidden = fv.global_hidden.value();
    }
    out.local_hidden = fv.local_hidden.value();
    out.underlying = fv.underlying.value();
    out.features = fv.features.value();
    out.reconstruction = fv.reconstruction.value();
    return out;
}

Var loss_graph_term(Var hidden, const Matrix& target, double bandwidth) {
    Tape& tape = *hidden.tape();
    Var latent = rbf_similarity(hidden, bandwidth);
    if (!latent.value().same_shape(target)) {
        throw ShapeError("graph loss: latent " + latent.value().shape_string() + " vs target " +
                         target.shape_string());
    }
    return ad::mean(ad::square(ad::sub(latent, tape.constant(target))));
}

Var loss_underlying(Var global_hidden, Var local_hidden, const Matrix& fused, const Matrix& local,
                    double bandwidth) {
    return ad::add(loss_graph_term(global_hidden, fused, bandwidth),
                   loss_graph_term(local_hidden, local, bandwidth));
}

double loss_underlying(const Matrix& global_hidden, const Matrix& local_hidden, const Matrix& fused,
                       const Matrix& local, double bandwidth) {
    Tape tape;
    return scalar(loss_underlying(tape.constant(global_hidden), tape.constant(local_hidden), fused,
                                  local, bandwidth));
}

Var loss_consistent(Var features, const Matrix& fused, double bandwidth) {
    return loss_graph_term(features, fused, bandwidth);
}

double loss_consistent(const Matrix& features, const Matrix& fused, double bandwidth) {
    Tape tape;
    return scalar(loss_consistent(tape.constant(features), fused, bandwidth));
}

Var loss_content(Var x, Var reconstruction, std::span<const std::size_t> complete) {
    if (complete.empty()) {
        throw DegenerateError("loss_content: no complete samples");
    }
    const Matrix& xv = x.value();
    if (!xv.same_shape(reconstruction.value())) {
        throw ShapeError("loss_content: " + xv.shape_string() + " vs " +
                         reconstruction.value().shape_string());
    }
    Matrix mask(xv.rows(), xv.cols());
    for (std::size_t i : complete) {
        if (i >= xv.rows()) {
            throw ParameterError("loss_content: row " + std::to_string(i) + " out of range");
        }
        std::fill(mask.row(i).begin(), mask.row(i).end(), 1.0);
    }
    Tape& tape = *x.tape();
    Var diff = ad::mul(ad::sub(reconstruction, x), tape.constant(std::move(mask)));
    const double count = static_cast<double>(complete.size() * xv.cols());
    return ad::scale(ad::sum(ad::square(diff)), 1.0 / count);
}

double loss_content(const Matrix& x, const Matrix& reconstruction,
                    std::span<const std::size_t> complete) {
    Tape tape;
    return scalar(loss_content(tape.constant(x), tape.constant(reconstruction), complete));
}

ObjectiveVars build_objective(Tape& tape, const ClientModel& model, std::span<const Var> params,
                              const ObjectiveInputs& in) {
    ObjectiveVars ov;
    ov.features = extract_features(model, params, *in.encoder);
    const FeatureVars& fv = ov.features;
    const Ablation ab = model.ablation();
    const bool global_terms = model.has_global_head() && ab != Ablation::no_global_guidance;
    Var zero = tape.constant(Matrix(1, 1, 0.0));

    ov.underlying = loss_graph_term(fv.local_hidden, *in.local_target,
                                    pick_bandwidth(in.bandwidth, fv.local_hidden.value()));
    ov.consistent = zero;
    if (global_terms) {
        ov.underlying = ad::add(
            loss_graph_term(fv.global_hidden, *in.fused_target,
                            pick_bandwidth(in.bandwidth, fv.global_hidden.value())),
            ov.underlying);
        ov.consistent = loss_consistent(fv.features, *in.fused_target,
                                        pick_bandwidth(in.bandwidth, fv.features.value()));
    }
    ov.reconstruction = loss_content(tape.constant(in.encoder->x), fv.reconstruction, in.complete);

    Var clustered = ab == Ablation::no_fusion_module ? ad::detach(fv.features) : fv.features;
    ov.soft = soft_assign(clustered, params[model.layout().centers]);
    const Matrix target = in.target.empty() ? target_distribution(ov.soft.value()) : in.target;
    ov.clustering = loss_kl(target, ov.soft);

    Var graph = ad::add(ov.underlying, ov.consistent);
    ov.total = ad::add(ov.clustering, ad::add(ad::scale(graph, in.weights.gamma1),
                                              ad::scale(ov.reconstruction, in.weights.gamma2)));
    return ov;
}

namespace {

LossBreakdown breakdown_of(const ObjectiveVars& ov) {
    LossBreakdown b;
    b.clustering = scalar(ov.clustering);
    b.underlying = scalar(ov.underlying);
    b.consistent = scalar(ov.consistent);
    b.graph = b.underlying + b.consistent;
    b.reconstruction = scalar(ov.reconstruction);
    b.total = scalar(ov.total);
    return b;
}

std::string non_finite_term(const LossBreakdown& b) {
    if (!std::isfinite(b.clustering)) return "clustering";
    if (!std::isfinite(b.underlying)) return "underlying graph";
    if (!std::isfinite(b.consistent)) return "consistent graph";
    if (!std::isfinite(b.reconstruction)) return "reconstruction";
    return "total";
}

// Graph losses only; used once before the first-round center initialization.
LossBreakdown warmup_step(ClientModel& model, const ObjectiveInputs& in, Adam& opt,
                          const TrainSettings& s) {
    Tape tape;
    auto params = bind_parameters(tape, model.parameters(), true);
    ObjectiveVars ov = build_objective(tape, model, params, in);
    Var feature_loss =
        ad::add(ad::scale(ad::add(ov.underlying, ov.consistent), in.weights.gamma1),
                ad::scale(ov.reconstruction, in.weights.gamma2));
    LossBreakdown b = breakdown_of(ov);
    tape.backward(feature_loss);
    std::vector<Matrix> grads;
    for (const Var& v : params) {
        grads.push_back(tape.grad(v));
    }
    try {
        opt.step(model.parameters(), grads);
    } catch (const NumericError& e) {
        throw TrainingError(context(s.round, s.client) + ": warm-up aborted: " + e.what() + " [" +
                                describe(b) + "]",
                            {b});
    }
    return b;
}

}  // namespace

TrainResult train_round(ClientModel& model, const TrainInputs& in, const TrainSettings& s) {
    const std::size_t n = in.x.rows();
    if (in.present.size() != n) {
        throw ParameterError(context(s.round, s.client) + ": presence mask has " +
                             std::to_string(in.present.size()) + " entries for " +
                             std::to_string(n) + " samples");
    }
    if (model.has_global_head() && in.fused.n() != n) {
        throw ProtocolError(context(s.round, s.client) + ": fused graph missing or wrong size");
    }
    const EncoderInputs enc =
        EncoderInputs::build(in.x, in.local, model.has_global_head() ? &in.fused : nullptr);

    ObjectiveInputs oi;
    oi.encoder = &enc;
    oi.fused_target = &in.fused.matrix();
    oi.local_target = &in.local.matrix();
    for (std::size_t i = 0; i < n; ++i) {
        if (in.present[i]) {
            oi.complete.push_back(i);
        }
    }
    oi.weights = s.weights;
    oi.bandwidth = s.bandwidth;
    if (in.pseudo_labels) {
        if (in.pseudo_labels->rows() != n || in.pseudo_labels->cols() != model.dims().clusters) {
            throw ProtocolError(context(s.round, s.client) + ": pseudo-labels have shape " +
                                in.pseudo_labels->shape_string());
        }
        oi.target = *in.pseudo_labels;
    }

    Adam opt(s.adam, model.parameters());
    std::vector<LossBreakdown> trace;
    if (in.global_centers) {
        model.set_centers(*in.global_centers);
    } else if (s.epochs > 0) {
        trace.push_back(warmup_step(model, oi, opt, s));
        const Matrix h = extract_features(model, enc).features;
        model.set_centers(kmeans(h, model.dims().clusters, s.seed, s.kmeans).centers);
        opt = Adam(s.adam, model.parameters());
        trace.clear();
    }

    for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
        Tape tape;
        auto params = bind_parameters(tape, model.parameters(), true);
        LossBreakdown b;
        ObjectiveVars ov;
        try {
            ov = build_objective(tape, model, params, oi);
            b = breakdown_of(ov);
        } catch (const NumericError& e) {
            throw TrainingError(context(s.round, s.client) + ", epoch " + std::to_string(epoch) +
                                    ": non-finite value while evaluating the loss: " + e.what(),
                                trace);
        }
        trace.push_back(b);
        if (!std::isfinite(b.total)) {
            throw TrainingError(context(s.round, s.client) + ", epoch " + std::to_string(epoch) +
                                    ": non-finite " + non_finite_term(b) + " loss [" + describe(b) +
                                    "]",
                                trace);
        }
        tape.backward(ov.total);
        std::vector<Matrix> grads;
        grads.reserve(params.size());
        for (const Var& v : params) {
            grads.push_back(tape.grad(v));
        }
        try {
            opt.step(model.parameters(), grads);
        } catch (const NumericError& e) {
            throw TrainingError(context(s.round, s.client) + ", epoch " + std::to_string(epoch) +
                                    ": " + e.what() + " [" + describe(b) + "]",
                                trace);
        }
    }

    TrainResult out;
    out.trace = std::move(trace);
    const ExtractedFeatures fx = extract_features(model, enc);
    out.soft = soft_assign(fx.features, model.centers());
    out.labels = assign_labels(out.soft);
    out.output.features = fx.features;
    try {
        out.output.weights = silhouette(fx.features, out.labels);
    } catch (const DegenerateError&) {
        out.output.weights.assign(n, 0.0);
        out.degenerate_silhouette = true;
    }
    out.reconstruction = fx.reconstruction;
    out.x = in.x;
    for (std::size_t i = 0; i < n; ++i) {
        if (!in.present[i]) {
            const auto src = fx.reconstruction.row(i);
            std::copy(src.begin(), src.end(), out.x.row(i).begin());
        }
    }
    return out;
}

namespace {

Var local_head(const ClientModel& model, std::span<const Var> params, const EncoderInputs& inputs) {
    const auto& lay = model.layout();
    Tape& tape = *params.front().tape();
    std::vector<Var> ws, bs;
    for (std::size_t l = 0; l < lay.local_weights.size(); ++l) {
        ws.push_back(params[lay.local_weights[l]]);
        bs.push_back(params[lay.local_biases[l]]);
    }
    Var x = tape.constant(inputs.x);
    Var prop = tape.constant(inputs.local_propagation);
    Var px = tape.constant(inputs.local_px);
    return gcn_stack(ws, bs, x, prop, &px);
}

}  // namespace

Var pretrain_objective(const ClientModel& model, std::span<const Var> params,
                       const EncoderInputs& inputs, const Matrix& local_target, std::size_t k,
                       double bandwidth) {
    Tape& tape = *params.front().tape();
    Var hl = local_head(model, params, inputs);
    Var latent = rbf_similarity(hl, pick_bandwidth(bandwidth, hl.value()));
    Var kept = ad::mul(latent, tape.constant(topk_pattern(latent.value(), k, SelfLoops::exclude)));
    return ad::mean(ad::square(ad::sub(kept, tape.constant(local_target))));
}

PretrainResult pretrain(ClientModel& model, const Matrix& x, const AdjacencyGraph& local_incomplete,
                        std::size_t epochs, std::size_t k, const AdamConfig& adam, double bandwidth) {
    const EncoderInputs enc = EncoderInputs::build(x, local_incomplete, nullptr);
    const auto idx = model.local_head_indices();
    std::vector<Matrix> subset;
    for (std::size_t i : idx) {
        subset.push_back(model.parameters()[i]);
    }
    Adam opt(adam, subset);
    PretrainResult out;
    for (std::size_t e = 0; e < epochs; ++e) {
        Tape tape;
        auto params = bind_parameters(tape, model.parameters(), true);
        Var loss = pretrain_objective(model, params, enc, local_incomplete.matrix(), k, bandwidth);
        const double lv = scalar(loss);
        out.trace.push_back(lv);
        if (!std::isfinite(lv)) {
            throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(e));
        }
        tape.backward(loss);
        std::vector<Matrix> grads;
        for (std::size_t i : idx) {
            grads.push_back(tape.grad(params[i]));
        }
        opt.step(subset, grads);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            model.parameters()[idx[j]] = subset[j];
        }
    }
    Tape tape;
    auto params = bind_parameters(tape, model.parameters(), false);
    out.local_hidden = local_head(model, params, enc).value();
    return out;
}

}  // namespace fimc
