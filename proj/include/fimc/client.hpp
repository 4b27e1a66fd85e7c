#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fimc/autodiff.hpp"
#include "fimc/clustering.hpp"
#include "fimc/errors.hpp"
#include "fimc/graph.hpp"
#include "fimc/matrix.hpp"
#include "fimc/optimizer.hpp"

namespace fimc {

// Ablation variants; each removes one fused-graph component.
enum class Ablation {
    none,
    no_migration,        // A: missing rows keep an empty adjacency row
    no_fusion_module,    // B: linear projection trained only by the consistency loss
    no_global_guidance,  // C: drop the global-head and consistency graph losses
    no_global_head,      // D: single local head; A, B and C disappear with it
};

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& name);

struct ModelDims {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 64;   // width of each GCN head
    std::size_t feature_dim = 32;  // width of the uploaded features
    std::size_t mlp_width = 128;   // hidden width of decoder and fusion
    std::size_t gcn_layers = 2;
    std::size_t clusters = 2;
};

// Trainable parameters of one client, stored as a flat list with a fixed layout.
class ClientModel {
public:
    ClientModel(const ModelDims& dims, Ablation ablation, std::uint64_t seed);

    const ModelDims& dims() const noexcept { return dims_; }
    Ablation ablation() const noexcept { return ablation_; }
    bool has_global_head() const noexcept { return ablation_ != Ablation::no_global_head; }
    std::size_t underlying_width() const noexcept {
        return has_global_head() ? 2 * dims_.hidden_dim : dims_.hidden_dim;
    }

    std::vector<Matrix>& parameters() noexcept { return params_; }
    const std::vector<Matrix>& parameters() const noexcept { return params_; }

    // Parameter indices per component.
    struct Layout {
        std::vector<std::size_t> global_weights, global_biases;
        std::vector<std::size_t> local_weights, local_biases;
        std::vector<std::size_t> fusion;   // alternating weight, bias
        std::vector<std::size_t> decoder;  // alternating weight, bias
        std::size_t centers = 0;
    };
    const Layout& layout() const noexcept { return layout_; }

    const Matrix& centers() const { return params_[layout_.centers]; }
    void set_centers(const Matrix& centers);

    std::vector<std::size_t> local_head_indices() const;

private:
    std::size_t add(Matrix m);

    ModelDims dims_;
    Ablation ablation_;
    Layout layout_;
    std::vector<Matrix> params_;
};

// Per-round constant inputs of the forward pass.
struct EncoderInputs {
    Matrix x;
    Matrix local_propagation;   // normalized migrated local graph
    Matrix global_propagation;  // normalized fused graph (unused without global head)
    // Cached propagation of the raw input for the first GCN layer.
    Matrix local_px;
    Matrix global_px;

    static EncoderInputs build(const Matrix& x, const AdjacencyGraph& local,
                               const AdjacencyGraph* fused);
};

struct FeatureVars {
    Var global_hidden;  // absent without a global head
    Var local_hidden;
    Var underlying;
    Var features;
    Var reconstruction;
};

struct ExtractedFeatures {
    Matrix global_hidden;
    Matrix local_hidden;
    Matrix underlying;
    Matrix features;
    Matrix reconstruction;
};

// One GCN layer stack: H_t = relu(P H_{t-1} W_t + b_t) + H_{t-1}; the skip
// term is dropped when a layer changes width.
Var gcn_forward(std::span<const Var> weights, std::span<const Var> biases, Var x, Var propagation);
Matrix gcn_forward(std::span<const Matrix> weights, std::span<const Matrix> biases, const Matrix& x,
                   const Matrix& propagation);

std::vector<Var> bind_parameters(Tape& tape, const std::vector<Matrix>& params, bool trainable);

FeatureVars extract_features(const ClientModel& model, std::span<const Var> params,
                             const EncoderInputs& inputs);
ExtractedFeatures extract_features(const ClientModel& model, const EncoderInputs& inputs);

// Mean-reduced squared Frobenius distances between RBF latent graphs and binary targets.
Var loss_underlying(Var global_hidden, Var local_hidden, const Matrix& fused, const Matrix& local,
                    double bandwidth);
double loss_underlying(const Matrix& global_hidden, const Matrix& local_hidden, const Matrix& fused,
                       const Matrix& local, double bandwidth);
// Only the global or only the local term.
Var loss_graph_term(Var hidden, const Matrix& target, double bandwidth);

Var loss_consistent(Var features, const Matrix& fused, double bandwidth);
double loss_consistent(const Matrix& features, const Matrix& fused, double bandwidth);

// Mean squared error over the `complete` rows only.
Var loss_content(Var x, Var reconstruction, std::span<const std::size_t> complete);
double loss_content(const Matrix& x, const Matrix& reconstruction,
                    std::span<const std::size_t> complete);

struct LossBreakdown {
    double clustering = 0.0;
    double underlying = 0.0;
    double consistent = 0.0;
    double graph = 0.0;  // underlying + consistent
    double reconstruction = 0.0;
    double total = 0.0;
};

struct LossWeights {
    double gamma1 = 1.0;
    double gamma2 = 0.1;
};

// Everything needed to evaluate the client objective once.
struct ObjectiveInputs {
    const EncoderInputs* encoder = nullptr;
    const Matrix* fused_target = nullptr;  // binary fused graph
    const Matrix* local_target = nullptr;  // binary migrated local graph
    std::vector<std::size_t> complete;
    // Fixed target distribution; when empty, the sharpened current Q is used.
    Matrix target;
    LossWeights weights;
    // Bandwidth for latent graphs; <= 0 selects the median heuristic per feature set.
    double bandwidth = 0.0;
};

struct ObjectiveVars {
    Var total;
    Var clustering;
    Var underlying;
    Var consistent;
    Var reconstruction;
    FeatureVars features;
    Var soft;
};

ObjectiveVars build_objective(Tape& tape, const ClientModel& model, std::span<const Var> params,
                              const ObjectiveInputs& in);

// Raised when training hits a non-finite loss or gradient.
class TrainingError : public NumericError {
public:
    TrainingError(const std::string& what, std::vector<LossBreakdown> trace)
        : NumericError(what), trace_(std::move(trace)) {}
    const std::vector<LossBreakdown>& trace() const noexcept { return trace_; }

private:
    std::vector<LossBreakdown> trace_;
};

struct TrainSettings {
    std::size_t epochs = 100;
    LossWeights weights;
    AdamConfig adam;
    double bandwidth = 0.0;
    std::size_t round = 0;
    std::size_t client = 0;
    std::uint64_t seed = 0;
    KMeansOptions kmeans;
};

struct TrainInputs {
    Matrix x;
    std::vector<bool> present;
    AdjacencyGraph local;  // already migrated
    AdjacencyGraph fused;
    std::optional<Matrix> pseudo_labels;   // P from the server
    std::optional<Matrix> global_centers;  // U^m from the server
};

struct ClientRoundOutput {
    Matrix features;              // H^m
    std::vector<double> weights;  // silhouettes w^m
};

struct TrainResult {
    ClientRoundOutput output;
    std::vector<LossBreakdown> trace;
    Matrix reconstruction;  // X-hat after the last epoch
    Matrix x;               // input with missing rows replaced by the reconstruction
    Matrix soft;            // Q^m after the last epoch
    Labels labels;
    bool degenerate_silhouette = false;
};

// Runs E full-batch Adam steps on L_c + gamma1 L_g + gamma2 L_r, then replaces
// missing rows and computes silhouettes on the final features.
TrainResult train_round(ClientModel& model, const TrainInputs& in, const TrainSettings& settings);

struct PretrainResult {
    Matrix local_hidden;
    std::vector<double> trace;
};

// Optimizes ||tau_k(latent_l) - A||^2 over the local head only.
PretrainResult pretrain(ClientModel& model, const Matrix& x, const AdjacencyGraph& local_incomplete,
                        std::size_t epochs, std::size_t k, const AdamConfig& adam,
                        double bandwidth = 0.0);

// Pretraining objective for one evaluation; exposed for gradient checks.
Var pretrain_objective(const ClientModel& model, std::span<const Var> params,
                       const EncoderInputs& inputs, const Matrix& local_target, std::size_t k,
                       double bandwidth);

}  // namespace fimc
