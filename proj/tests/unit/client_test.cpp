#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fimc/client.hpp"
#include "fimc/data.hpp"
#include "fimc/errors.hpp"
#include "support.hpp"

using namespace fimc;

namespace {

// Independent DEC sharpening: p_ij ∝ q_ij^2 / sum_i q_ij.
Matrix sharpen_oracle(const Matrix& q) {
    Matrix p(q.rows(), q.cols());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < q.cols(); ++j) {
            double f = 0.0;
            for (std::size_t r = 0; r < q.rows(); ++r) {
                f += q(r, j);
            }
            p(i, j) = q(i, j) * q(i, j) / f;
            z += p(i, j);
        }
        for (std::size_t j = 0; j < q.cols(); ++j) {
            p(i, j) /= z;
        }
    }
    return p;
}

// Silhouette of point i from its definition, 1-D points.
double silhouette_oracle(const std::vector<double>& x, const std::vector<std::size_t>& y, std::size_t i) {
    std::vector<double> sum(3, 0.0), count(3, 0.0);
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (j != i) {
            sum[y[j]] += std::abs(x[i] - x[j]);
            count[y[j]] += 1.0;
        }
    }
    const double a = sum[y[i]] / count[y[i]];
    double b = 1e300;
    for (std::size_t k = 0; k < 3; ++k) {
        if (k != y[i] && count[k] > 0) {
            b = std::min(b, sum[k] / count[k]);
        }
    }
    return (b - a) / std::max(a, b);
}

ModelDims small_dims(std::size_t input, std::size_t clusters = 2) {
    return ModelDims{input, 8, 4, 16, 2, clusters};
}

Matrix column(std::initializer_list<double> v) {
    Matrix m(v.size(), 1);
    std::size_t i = 0;
    for (double x : v) {
        m(i++, 0) = x;
    }
    return m;
}

// One view of well-separated blobs with its k-NN graph.
struct Toy {
    MultiViewData data;
    TrainInputs inputs;
};

Toy toy_view(std::uint64_t seed, std::size_t n = 60) {
    SynthSpec spec;
    spec.samples = n;
    spec.clusters = 3;
    spec.dims = {12};
    spec.seed = seed;
    Toy t;
    t.data = synth_blobs(spec);
    t.inputs.x = t.data.views[0].x;
    t.inputs.present = t.data.views[0].present;
    t.inputs.local = build_local_graph(t.inputs.x, t.inputs.present, 5);
    t.inputs.fused = t.inputs.local;
    return t;
}

}  // namespace

TEST_CASE("gcn layer with identity weights doubles a nonnegative single node") {
    const Matrix v{{0.5, 2.0}};
    const std::vector<Matrix> w{Matrix::identity(2)}, b{Matrix(1, 2)};
    CHECK(gcn_forward(w, b, v, Matrix(1, 1, 1.0)) == 2.0 * v);
}

TEST_CASE("gcn layer on two connected nodes") {
    const Matrix h{{2}, {0}};
    const Matrix p = normalize_propagation(AdjacencyGraph::from_matrix(Matrix{{0, 1}, {1, 0}}));
    const std::vector<Matrix> w{Matrix{{1}}}, b{Matrix(1, 1)};
    // P*H = [[1],[1]]; relu + skip = [[3],[1]].
    const Matrix out = gcn_forward(w, b, h, p);
    CHECK(out(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(out(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("gcn layer with zero weights is a pure skip") {
    const Matrix x = test::random_matrix(3, 4, 21);
    const std::vector<Matrix> w{Matrix(4, 4)}, b{Matrix(1, 4)};
    CHECK(gcn_forward(w, b, x, Matrix::identity(3)) == x);
}

TEST_CASE("gcn layer that changes width has no skip") {
    const Matrix x{{1.0, -1.0}};
    const std::vector<Matrix> w{Matrix{{1.0, 0.0, 2.0}, {0.0, 1.0, 0.0}}}, b{Matrix(1, 3)};
    CHECK(gcn_forward(w, b, x, Matrix(1, 1, 1.0)) == Matrix{{1.0, 0.0, 2.0}});
}

TEST_CASE("gcn_forward shape errors") {
    const std::vector<Matrix> w{Matrix(3, 2)}, b{Matrix(1, 2)};
    CHECK_THROWS_AS(gcn_forward(w, b, Matrix(2, 4), Matrix::identity(2)), ShapeError);
    CHECK_THROWS_AS(gcn_forward(w, b, Matrix(2, 3), Matrix::identity(3)), ShapeError);
}

TEST_CASE("underlying features concatenate both heads") {
    const ClientModel model(small_dims(5), Ablation::none, 1);
    const Matrix x = test::random_matrix(6, 5, 22);
    const AdjacencyGraph g = knn_binarize(rbf_similarity(x, 1.0).values, 2, SelfLoops::exclude);
    const ExtractedFeatures f = extract_features(model, EncoderInputs::build(x, g, &g));
    CHECK(f.underlying.cols() == 2 * 8);
    CHECK(f.features.cols() == 4);
    CHECK(f.reconstruction.cols() == 5);
}

TEST_CASE("identical graphs and head weights give identical heads") {
    ClientModel model(small_dims(5), Ablation::none, 2);
    auto& p = model.parameters();
    const auto& lay = model.layout();
    for (std::size_t l = 0; l < lay.local_weights.size(); ++l) {
        p[lay.global_weights[l]] = p[lay.local_weights[l]];
        p[lay.global_biases[l]] = p[lay.local_biases[l]];
    }
    const Matrix x = test::random_matrix(6, 5, 23);
    const AdjacencyGraph g = knn_binarize(rbf_similarity(x, 1.0).values, 2, SelfLoops::exclude);
    const ExtractedFeatures f = extract_features(model, EncoderInputs::build(x, g, &g));
    CHECK(f.global_hidden == f.local_hidden);
}

TEST_CASE("a zero row with connected neighbours gets a nonzero feature row") {
    const ClientModel model(small_dims(2), Ablation::none, 3);
    const Matrix x{{1.0, 2.0}, {0.0, 0.0}, {2.0, 1.0}};
    const AdjacencyGraph g = AdjacencyGraph::from_matrix(Matrix{{0, 0, 1}, {1, 0, 1}, {1, 0, 0}});
    const ExtractedFeatures f = extract_features(model, EncoderInputs::build(x, g, &g));
    double norm = 0.0;
    for (double v : f.local_hidden.row(1)) {
        norm += v * v;
    }
    CHECK(norm > 0.0);

    // Without edges the same row only sees its own zero input.
    const AdjacencyGraph isolated = clear_rows(g, std::vector<std::size_t>{1});
    const ExtractedFeatures alone = extract_features(model, EncoderInputs::build(x, isolated, &isolated));
    Matrix expected(1, 8);  // zero biases
    CHECK(Matrix(1, 8, std::vector<double>(alone.local_hidden.row(1).begin(),
                                           alone.local_hidden.row(1).end())) == expected);
}

TEST_CASE("the global head requires a fused graph") {
    const ClientModel model(small_dims(3), Ablation::none, 4);
    const Matrix x = test::random_matrix(4, 3, 24);
    const AdjacencyGraph g = knn_binarize(rbf_similarity(x, 1.0).values, 1, SelfLoops::exclude);
    CHECK_THROWS_AS(extract_features(model, EncoderInputs::build(x, g, nullptr)), ProtocolError);
    const ClientModel local_only(small_dims(3), Ablation::no_global_head, 4);
    CHECK_NOTHROW(extract_features(local_only, EncoderInputs::build(x, g, nullptr)));
}

TEST_CASE("graph loss of features that reproduce the target is zero") {
    // Far-apart points with a tiny bandwidth give an exact identity latent graph.
    const Matrix h = column({0.0, 10.0, 20.0});
    const Matrix target = Matrix::identity(3);
    CHECK(loss_consistent(h, target, 1e-3) == 0.0);
    CHECK(loss_underlying(h, h, target, target, 1e-3) == 0.0);
}

TEST_CASE("two-node graph loss by hand expansion") {
    const Matrix h = column({0.0, 1.0});
    const double a = std::exp(-1.0);
    const double expected = 2.0 * (1.0 - a) * (1.0 - a) / 4.0;
    const Matrix ones = Matrix::ones(2, 2);
    CHECK(loss_consistent(h, ones, 1.0) == doctest::Approx(expected).epsilon(1e-14));
    const Matrix exact = rbf_similarity(h, 1.0).values;
    CHECK(loss_underlying(h, h, ones, exact, 1.0) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(loss_underlying(h, h, ones, ones, 1.0) == doctest::Approx(2.0 * expected).epsilon(1e-14));
}

TEST_CASE("graph losses are nonnegative") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Matrix h = test::random_matrix(5, 3, 30 + s);
        const Matrix target = knn_binarize(test::random_matrix(5, 5, 40 + s), 2).matrix();
        CHECK(loss_consistent(h, target, 1.0) >= 0.0);
        CHECK(loss_underlying(h, h, target, target, 0.5) >= 0.0);
    }
}

TEST_CASE("content loss is exact on complete rows") {
    const Matrix x = test::random_matrix(4, 3, 25);
    const std::vector<std::size_t> complete{0, 2};
    CHECK(loss_content(x, x, complete) == 0.0);
    Matrix wrong = x;
    wrong(1, 0) = 100.0;
    wrong(3, 2) = -7.0;
    CHECK(loss_content(x, wrong, complete) == 0.0);
}

TEST_CASE("content loss of one complete row") {
    const Matrix x{{1, 0}, {5, 5}};
    const Matrix xhat{{0, 0}, {0, 0}};
    CHECK(loss_content(x, xhat, std::vector<std::size_t>{0}) == 0.5);
}

TEST_CASE("content loss needs a complete row") {
    CHECK_THROWS_AS(loss_content(Matrix(2, 2), Matrix(2, 2), {}), DegenerateError);
}

TEST_CASE("soft assignment of an equidistant point") {
    const Matrix q = soft_assign(Matrix{{0, 0}}, Matrix{{1, 0}, {-1, 0}});
    CHECK(q == Matrix{{0.5, 0.5}});
}

TEST_CASE("soft assignment in closed form") {
    const Matrix q = soft_assign(Matrix{{0, 0}}, Matrix{{0, 0}, {1, 1}});
    CHECK(q(0, 0) == doctest::Approx(1.0 / (1.0 + 1.0 / 3.0)).epsilon(1e-15));
    CHECK(q(0, 0) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("soft assignment rows sum to one") {
    const Matrix q = soft_assign(test::random_matrix(7, 3, 26), test::random_matrix(4, 3, 27));
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double s = 0.0;
        for (double v : q.row(i)) {
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(soft_assign(Matrix(2, 3), Matrix(1, 3)), ParameterError);
}

TEST_CASE("target distribution fixed points") {
    const Matrix onehot{{1, 0}, {0, 1}, {1, 0}};
    CHECK(target_distribution(onehot) == onehot);
    const Matrix uniform(4, 3, 1.0 / 3.0);
    CHECK(max_abs_diff(target_distribution(uniform), uniform) < 1e-15);
}

TEST_CASE("target distribution of the two-row example") {
    const Matrix q{{0.8, 0.2}, {0.6, 0.4}};
    const Matrix p = target_distribution(q);
    CHECK(max_abs_diff(p, sharpen_oracle(q)) < 1e-15);
    // Oracle with f = (1.4, 0.6): 0.64/1.4 : 0.04/0.6.
    const double a = 0.64 / 1.4, b = 0.04 / 0.6;
    CHECK(p(0, 0) == doctest::Approx(a / (a + b)).epsilon(1e-14));
    CHECK(p(0, 0) == doctest::Approx(0.87273).epsilon(1e-5));
    CHECK(p(0, 1) == doctest::Approx(0.12727).epsilon(1e-4));
}

TEST_CASE("target distribution reports an empty cluster") {
    CHECK_THROWS_AS(target_distribution(Matrix{{1, 0}, {1, 0}}), DegenerateError);
}

TEST_CASE("KL divergence examples") {
    const Matrix q = soft_assign(test::random_matrix(3, 2, 28), test::random_matrix(2, 2, 29));
    CHECK(loss_kl(q, q) == 0.0);
    CHECK(loss_kl(Matrix{{1, 0}}, Matrix{{0.5, 0.5}}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(loss_kl(Matrix{{1, 0}}, Matrix{{0.5, 0.5}}) == doctest::Approx(0.69315).epsilon(1e-5));
    CHECK_THROWS_AS(loss_kl(Matrix{{0.5, 0.5}}, Matrix{{1, 0}}), NumericError);
}

TEST_CASE("differentiable KL matches the plain value") {
    const Matrix q = soft_assign(test::random_matrix(4, 2, 31), test::random_matrix(3, 2, 32));
    const Matrix p = target_distribution(q);
    Tape tape;
    CHECK(loss_kl(p, tape.constant(q)).value()(0, 0) == doctest::Approx(loss_kl(p, q)).epsilon(1e-12));
}

TEST_CASE("hard labels take the lowest index on ties") {
    CHECK(assign_labels(Matrix{{0.5, 0.5}}) == Labels{0});
    CHECK(assign_labels(Matrix{{0.2, 0.3, 0.5}}) == Labels{2});
    CHECK(assign_labels(Matrix{{0, 1}, {1, 0}}) == Labels{1, 0});
}

TEST_CASE("silhouette of two clusters on a line") {
    const std::vector<double> pts{0, 1, 5, 6};
    const Labels y{0, 0, 1, 1};
    const std::vector<double> w = silhouette(column({0, 1, 5, 6}), y);
    CHECK(w[0] == doctest::Approx(silhouette_oracle(pts, y, 0)).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(4.5 / 5.5).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(0.81818).epsilon(1e-5));
}

TEST_CASE("silhouette approaches one as duplicated clusters separate") {
    double last = -1.0;
    for (double d : {1.0, 10.0, 100.0, 1e4}) {
        const std::vector<double> w = silhouette(column({0, 0.1, d, d + 0.1}), Labels{0, 0, 1, 1});
        CHECK(w[0] > last);
        last = w[0];
    }
    CHECK(last > 0.999);
    const std::vector<double> dup = silhouette(column({0, 0, 9, 9}), Labels{0, 0, 1, 1});
    CHECK(dup[0] == 1.0);
}

TEST_CASE("a misassigned point has negative silhouette") {
    const std::vector<double> pts{0.0, 0.1, 10.0};
    const Labels y{0, 1, 1};
    const std::vector<double> w = silhouette(column({0.0, 0.1, 10.0}), y);
    CHECK(w[1] < 0.0);
    CHECK(w[1] == doctest::Approx(silhouette_oracle(pts, y, 1)).epsilon(1e-15));
    CHECK(w[0] == 0.0);  // singleton
}

TEST_CASE("silhouette needs two clusters") {
    CHECK_THROWS_AS(silhouette(column({0, 1, 2}), Labels{1, 1, 1}), DegenerateError);
}

TEST_CASE("loss breakdown adds up") {
    Toy t = toy_view(5, 30);
    ClientModel model(small_dims(12, 3), Ablation::none, 5);
    model.set_centers(test::random_matrix(3, 4, 33));
    const EncoderInputs enc = EncoderInputs::build(t.inputs.x, t.inputs.local, &t.inputs.fused);
    ObjectiveInputs oi;
    oi.encoder = &enc;
    oi.fused_target = &t.inputs.fused.matrix();
    oi.local_target = &t.inputs.local.matrix();
    for (std::size_t i = 0; i < 30; ++i) {
        oi.complete.push_back(i);
    }
    oi.weights = {0.7, 0.3};
    Tape tape;
    auto params = bind_parameters(tape, model.parameters(), true);
    const ObjectiveVars ov = build_objective(tape, model, params, oi);
    const double lc = ov.clustering.value()(0, 0), lu = ov.underlying.value()(0, 0),
                 ld = ov.consistent.value()(0, 0), lr = ov.reconstruction.value()(0, 0);
    CHECK(lc >= 0.0);
    CHECK(lu >= 0.0);
    CHECK(ld >= 0.0);
    CHECK(lr >= 0.0);
    CHECK(std::abs(ov.total.value()(0, 0) - (lc + 0.7 * (lu + ld) + 0.3 * lr)) < 1e-9);
}

TEST_CASE("train_round with zero epochs is a pure forward pass") {
    Toy t = toy_view(6);
    ClientModel model(small_dims(12, 3), Ablation::none, 6);
    const Matrix centers = test::random_matrix(3, 4, 34);
    t.inputs.global_centers = centers;
    const std::vector<Matrix> before = [&] {
        ClientModel copy = model;
        copy.set_centers(centers);
        return copy.parameters();
    }();
    TrainSettings s;
    s.epochs = 0;
    const TrainResult r = train_round(model, t.inputs, s);
    CHECK(model.parameters() == before);
    CHECK(r.trace.empty());
    const ExtractedFeatures f =
        extract_features(model, EncoderInputs::build(t.inputs.x, t.inputs.local, &t.inputs.fused));
    CHECK(r.output.features == f.features);
    CHECK(r.reconstruction == f.reconstruction);
    CHECK(r.soft == soft_assign(f.features, centers));
}

TEST_CASE("training loss mostly decreases on blobs") {
    double fraction = 0.0;
    const std::uint64_t seeds = 3;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        Toy t = toy_view(seed);
        ClientModel model(small_dims(12, 3), Ablation::none, seed);
        TrainSettings s;
        s.epochs = 30;
        s.seed = seed;
        const TrainResult r = train_round(model, t.inputs, s);
        REQUIRE(r.trace.size() == 30);
        std::size_t down = 0;
        for (std::size_t e = 1; e < r.trace.size(); ++e) {
            down += r.trace[e].total <= r.trace[e - 1].total ? 1 : 0;
        }
        fraction += static_cast<double>(down) / static_cast<double>(r.trace.size() - 1);
    }
    CHECK(fraction / static_cast<double>(seeds) >= 0.8);
}

TEST_CASE("pure center pulling concentrates the soft assignment") {
    Toy t = toy_view(7, 45);
    const Labels& y = *t.data.labels;
    Matrix onehot(45, 3);
    for (std::size_t i = 0; i < 45; ++i) {
        onehot(i, y[i]) = 1.0;
    }
    t.inputs.pseudo_labels = onehot;
    t.inputs.global_centers = test::random_matrix(3, 4, 35);
    const ClientModel initial(small_dims(12, 3), Ablation::none, 7);
    TrainSettings s;
    s.weights = {0.0, 0.0};
    auto sharpness = [&](std::size_t epochs) {
        ClientModel model = initial;
        s.epochs = epochs;
        const Matrix q = train_round(model, t.inputs, s).soft;
        double total = 0.0;
        for (std::size_t i = 0; i < q.rows(); ++i) {
            total += *std::max_element(q.row(i).begin(), q.row(i).end());
        }
        return total / static_cast<double>(q.rows());
    };
    const std::size_t epochs = 15;
    std::size_t rising = 0;
    double last = sharpness(0);
    for (std::size_t e = 1; e <= epochs; ++e) {
        const double now = sharpness(e);
        rising += now > last ? 1 : 0;
        last = now;
    }
    CHECK(static_cast<double>(rising) >= 0.8 * epochs);
}

TEST_CASE("pretraining on graph-perfect features is a no-op") {
    // Duplicated pairs: each row's only neighbour is its twin, and twins stay
    // bitwise identical through the GCN, so the masked latent graph is exact.
    const Matrix x{{1.0, 0.0}, {1.0, 0.0}, {-1.0, 2.0}, {-1.0, 2.0}};
    const std::vector<bool> present(4, true);
    const AdjacencyGraph local = build_local_graph(x, present, 1);
    ClientModel model(small_dims(2), Ablation::none, 8);
    const std::vector<Matrix> before = model.parameters();
    const PretrainResult r = pretrain(model, x, local, 5, 1, AdamConfig{});
    for (double v : r.trace) {
        CHECK(v == 0.0);
    }
    CHECK(model.parameters() == before);
}

TEST_CASE("top-k masking passes gradient only through kept entries") {
    const Matrix g0 = test::random_matrix(4, 4, 36, 0.0, 1.0);
    const Matrix pattern = topk_pattern(g0, 2, SelfLoops::exclude);
    const Matrix target = knn_binarize(test::random_matrix(4, 4, 37), 2).matrix();
    Tape tape;
    Var g = tape.parameter(g0);
    Var kept = ad::mul(g, tape.constant(pattern));
    tape.backward(ad::mean(ad::square(ad::sub(kept, tape.constant(target)))));
    const Matrix grad = tape.grad(g);
    for (std::size_t i = 0; i < 16; ++i) {
        if (pattern.data()[i] == 0.0) {
            CHECK(grad.data()[i] == 0.0);
        }
    }
}

TEST_CASE("pretraining lowers the local graph loss on blobs") {
    Toy t = toy_view(9);
    ClientModel model(small_dims(12, 3), Ablation::none, 9);
    const PretrainResult r = pretrain(model, t.inputs.x, t.inputs.local, 50, 5, AdamConfig{});
    REQUIRE(r.trace.size() == 50);
    CHECK(r.trace.back() < r.trace.front());
    CHECK(r.local_hidden.rows() == 60);
    CHECK(r.local_hidden.cols() == 8);
}

TEST_CASE("ablation names round-trip") {
    for (Ablation a : {Ablation::none, Ablation::no_migration, Ablation::no_fusion_module,
                       Ablation::no_global_guidance, Ablation::no_global_head}) {
        CHECK(parse_ablation(to_string(a)) == a);
    }
    CHECK(parse_ablation("no-global-head") == Ablation::no_global_head);
    CHECK_THROWS_AS(parse_ablation("no-such-thing"), ParameterError);
}
