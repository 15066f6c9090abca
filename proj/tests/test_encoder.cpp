#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "protoclr/encoder.hpp"
#include "support/oracles.hpp"

using namespace protoclr;
using oracles::max_relative_error;

namespace {

Mat random_mat(int rows, int cols, RngStream& rng, double sigma = 1.0) {
    Mat m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.next_normal(0.0, sigma);
    return m;
}

// Clustered training data: 4 classes, unit-sphere means scaled by 3.
LabeledBatch toy_clusters(int per_class, int dim, RngStream& rng) {
    LabeledBatch data;
    const int classes = 4;
    data.embeddings = Mat(classes * per_class, dim);
    data.labels.resize((std::size_t)(classes * per_class));
    Mat means(classes, dim);
    for (int y = 0; y < classes; ++y) {
        Vec v((std::size_t)dim);
        for (double& x : v) x = rng.next_normal();
        const Vec u = l2_normalize(v);
        for (int c = 0; c < dim; ++c) means(y, c) = 3.0 * u[(std::size_t)c];
    }
    for (int y = 0, row = 0; y < classes; ++y)
        for (int s = 0; s < per_class; ++s, ++row) {
            for (int c = 0; c < dim; ++c) data.embeddings(row, c) = means(y, c) + 0.5 * rng.next_normal();
            data.labels[(std::size_t)row] = y;
        }
    return data;
}

double min_abs_preactivation(const ForwardCache& cache) {
    double best = HUGE_VAL;
    for (std::size_t l = 0; l + 1 < cache.pre_activations.size(); ++l)
        for (std::size_t i = 0; i < cache.pre_activations[l].size(); ++i)
            best = std::min(best, std::fabs(cache.pre_activations[l].data()[i]));
    return best;
}

} // namespace

TEST_CASE("forward: identity single layer without normalization is the identity") {
    MlpSpec spec{{3, 3}, false};
    Params params;
    params.layers.resize(1);
    params.layers[0].weights = Mat(3, 3);
    for (int i = 0; i < 3; ++i) params.layers[0].weights(i, i) = 1.0;
    params.layers[0].bias.assign(3, 0.0);

    RngStream rng(1);
    const Mat x = random_mat(5, 3, rng);
    const auto [out, cache] = mlp_forward(spec, params, x);
    CHECK(out == x);
}

TEST_CASE("forward: normalization head yields unit rows") {
    MlpSpec spec{{4, 6, 3}, true};
    RngStream rng(2);
    Params params = init_params(spec, rng);
    const Mat x = random_mat(7, 4, rng);
    const auto [out, cache] = mlp_forward(spec, params, x);
    for (int r = 0; r < out.rows(); ++r) CHECK(std::fabs(norm(out.row(r)) - 1.0) < 1e-12);
}

TEST_CASE("forward: fixed two-layer net matches a hand matrix-multiply oracle") {
    MlpSpec spec{{2, 2, 2}, false};
    Params params;
    params.layers.resize(2);
    params.layers[0].weights = Mat::from_rows({{1.0, -2.0}, {0.5, 1.0}});
    params.layers[0].bias = {0.25, -0.5};
    params.layers[1].weights = Mat::from_rows({{2.0, 0.0}, {-1.0, 1.0}});
    params.layers[1].bias = {0.0, 1.0};

    const Mat x = Mat::from_rows({{1.0, 2.0}});
    // layer 1: (1*1 + 2*0.5 + 0.25, 1*-2 + 2*1 - 0.5) = (2.25, -0.5); ReLU -> (2.25, 0)
    // layer 2: (2.25*2 + 0*-1, 2.25*0 + 0*1 + 1) = (4.5, 1.0)
    const auto [out, cache] = mlp_forward(spec, params, x);
    CHECK(out(0, 0) == Catch::Approx(4.5).margin(1e-12));
    CHECK(out(0, 1) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("forward: input dimension mismatch raises") {
    MlpSpec spec{{3, 2}, false};
    RngStream rng(3);
    Params params = init_params(spec, rng);
    CHECK_THROWS_MATCHES(mlp_forward(spec, params, Mat(2, 4)), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::shape_mismatch; }));
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
    MlpSpec spec{{3, 4, 2}, true};
    RngStream rng(4);
    Params params = init_params(spec, rng);
    const Mat x = random_mat(5, 3, rng);
    const auto [out, cache] = mlp_forward(spec, params, x);
    const auto [grads, input_grad] = mlp_backward(spec, params, cache, Mat(5, 2));
    for (const auto& layer : grads.layers) {
        for (std::size_t i = 0; i < layer.weights.size(); ++i) CHECK(layer.weights.data()[i] == 0.0);
        for (double b : layer.bias) CHECK(b == 0.0);
    }
    for (std::size_t i = 0; i < input_grad.size(); ++i) CHECK(input_grad.data()[i] == 0.0);
}

TEST_CASE("backward: mismatched upstream shape raises StaleCache") {
    MlpSpec spec{{3, 2}, false};
    RngStream rng(5);
    Params params = init_params(spec, rng);
    const auto [out, cache] = mlp_forward(spec, params, random_mat(4, 3, rng));
    CHECK_THROWS_MATCHES(mlp_backward(spec, params, cache, Mat(4, 3)), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::stale_cache; }));
    CHECK_THROWS_MATCHES(mlp_backward(spec, params, ForwardCache{}, Mat(4, 2)), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::stale_cache; }));
}

TEST_CASE("backward: parameter gradients match finite differences of <upstream, forward>") {
    MlpSpec spec{{4, 5, 3}, true};
    RngStream rng(11); // seed chosen so all ReLU pre-activations stay off zero
    Params params = init_params(spec, rng);
    const Mat x = random_mat(6, 4, rng);
    const Mat upstream = random_mat(6, 3, rng);

    const auto [out, cache] = mlp_forward(spec, params, x);
    REQUIRE(min_abs_preactivation(cache) > 1e-3);
    const auto [grads, input_grad] = mlp_backward(spec, params, cache, upstream);

    auto objective = [&](const Params& p) {
        const auto [o, c] = mlp_forward(spec, p, x);
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += upstream.data()[i] * o.data()[i];
        return s;
    };

    const double h = 1e-5;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Mat fd_w(params.layers[l].weights.rows(), params.layers[l].weights.cols());
        for (std::size_t i = 0; i < fd_w.size(); ++i) {
            Params p = params;
            p.layers[l].weights.data()[i] += h;
            const double up = objective(p);
            p.layers[l].weights.data()[i] -= 2 * h;
            const double down = objective(p);
            fd_w.data()[i] = (up - down) / (2 * h);
        }
        CHECK(max_relative_error(fd_w, grads.layers[l].weights) < 1e-5);

        Vec fd_b(params.layers[l].bias.size());
        for (std::size_t i = 0; i < fd_b.size(); ++i) {
            Params p = params;
            p.layers[l].bias[i] += h;
            const double up = objective(p);
            p.layers[l].bias[i] -= 2 * h;
            const double down = objective(p);
            fd_b[i] = (up - down) / (2 * h);
        }
        CHECK(max_relative_error(fd_b, grads.layers[l].bias) < 1e-5);
    }

    // input gradient too
    Mat fd_x(x.rows(), x.cols());
    for (std::size_t i = 0; i < fd_x.size(); ++i) {
        Mat xp = x;
        xp.data()[i] += h;
        const auto [o1, c1] = mlp_forward(spec, params, xp);
        xp.data()[i] -= 2 * h;
        const auto [o2, c2] = mlp_forward(spec, params, xp);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < o1.size(); ++j) {
            s1 += upstream.data()[j] * o1.data()[j];
            s2 += upstream.data()[j] * o2.data()[j];
        }
        fd_x.data()[i] = (s1 - s2) / (2 * h);
    }
    CHECK(max_relative_error(fd_x, input_grad) < 1e-5);
}

TEST_CASE("backward: norm-head input gradient is orthogonal to the normalized output") {
    MlpSpec spec{{3, 3}, true};
    Params params;
    params.layers.resize(1);
    params.layers[0].weights = Mat(3, 3);
    for (int i = 0; i < 3; ++i) params.layers[0].weights(i, i) = 1.0;
    params.layers[0].bias.assign(3, 0.0);

    RngStream rng(7);
    const Mat x = random_mat(4, 3, rng);
    const auto [out, cache] = mlp_forward(spec, params, x);

    // upstream parallel to the output row, scaled arbitrarily
    Mat upstream(4, 3);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) upstream(r, c) = 2.5 * out(r, c);
    const auto [grads, input_grad] = mlp_backward(spec, params, cache, upstream);
    for (int r = 0; r < 4; ++r)
        CHECK(std::fabs(dot(input_grad.row(r), out.row(r))) < 1e-12);

    // and for a generic upstream the projection property still holds
    const Mat generic = random_mat(4, 3, rng);
    const auto [g2, input_grad2] = mlp_backward(spec, params, cache, generic);
    for (int r = 0; r < 4; ++r)
        CHECK(std::fabs(dot(input_grad2.row(r), out.row(r))) < 1e-12);
}

// --- optimizers -----------------------------------------------------------------

TEST_CASE("adamw: zero gradients and zero decay leave parameters unchanged") {
    MlpSpec spec{{3, 2}, false};
    RngStream rng(8);
    Params params = init_params(spec, rng);
    const Params before = params;
    AdamWState state = adamw_init(params);
    adamw_step(params, zero_grads_like(params), state, 1e-2, 0.0);
    CHECK(params.layers[0].weights == before.layers[0].weights);
    CHECK(params.layers[0].bias == before.layers[0].bias);
}

TEST_CASE("adamw: first step from zero state moves by about lr in the sign direction") {
    Params params;
    params.layers.resize(1);
    params.layers[0].weights = Mat::from_rows({{1.0, -2.0}});
    params.layers[0].bias = {0.0};
    AdamWState state = adamw_init(params);

    ParamGrads grads = zero_grads_like(params);
    grads.layers[0].weights(0, 0) = 0.3;
    grads.layers[0].weights(0, 1) = -7.0;

    const double lr = 1e-3;
    adamw_step(params, grads, state, lr, 0.0);
    // bias correction makes m_hat / sqrt(v_hat) = g / |g|
    CHECK(params.layers[0].weights(0, 0) == Catch::Approx(1.0 - lr).epsilon(1e-4));
    CHECK(params.layers[0].weights(0, 1) == Catch::Approx(-2.0 + lr).epsilon(1e-4));
}

TEST_CASE("adamw: decay is decoupled from the adaptive step") {
    Params params;
    params.layers.resize(1);
    params.layers[0].weights = Mat::from_rows({{4.0}});
    params.layers[0].bias = {2.0};
    AdamWState state = adamw_init(params);
    const double lr = 0.1, wd = 0.5;
    adamw_step(params, zero_grads_like(params), state, lr, wd);
    CHECK(params.layers[0].weights(0, 0) == Catch::Approx(4.0 * (1.0 - lr * wd)).epsilon(1e-12));
    CHECK(params.layers[0].bias[0] == Catch::Approx(2.0 * (1.0 - lr * wd)).epsilon(1e-12));
}

TEST_CASE("adamw: 100 steps descend a 2-d convex quadratic") {
    Params params;
    params.layers.resize(1);
    params.layers[0].weights = Mat::from_rows({{4.0, -3.0}});
    params.layers[0].bias = {};
    params.layers[0].bias.assign(1, 0.0);
    AdamWState state = adamw_init(params);

    const double target0 = 1.0, target1 = -1.0;
    auto distance = [&] {
        const double d0 = params.layers[0].weights(0, 0) - target0;
        const double d1 = params.layers[0].weights(0, 1) - target1;
        return std::sqrt(d0 * d0 + d1 * d1);
    };
    const double initial = distance();
    for (int step = 0; step < 100; ++step) {
        ParamGrads grads = zero_grads_like(params);
        grads.layers[0].weights(0, 0) = 2.0 * (params.layers[0].weights(0, 0) - target0);
        grads.layers[0].weights(0, 1) = 0.5 * (params.layers[0].weights(0, 1) - target1);
        adamw_step(params, grads, state, 0.05, 0.0);
    }
    CHECK(distance() < initial);
}

TEST_CASE("sgd: step moves against the gradient with decoupled decay") {
    Params params;
    params.layers.resize(1);
    params.layers[0].weights = Mat::from_rows({{2.0}});
    params.layers[0].bias = {0.0};
    ParamGrads grads = zero_grads_like(params);
    grads.layers[0].weights(0, 0) = 3.0;
    sgd_step(params, grads, 0.1, 0.5);
    CHECK(params.layers[0].weights(0, 0) == Catch::Approx(2.0 * (1 - 0.1 * 0.5) - 0.1 * 3.0).epsilon(1e-12));
}

// --- end-to-end gradient checks ---------------------------------------------------

TEST_CASE("end-to-end parameter gradients match finite differences for every loss kind") {
    RngStream data_rng(21);
    LabeledBatch data = toy_clusters(4, 4, data_rng); // 16 rows

    for (const LossKind kind : {LossKind::supcon, LossKind::protoclr, LossKind::infonce, LossKind::ce}) {
        const bool is_ce = kind == LossKind::ce;
        MlpSpec spec{{4, 6, is_ce ? 4 : 3}, !is_ce};
        RngStream rng(31);
        Params params = init_params(spec, rng);

        LossConfig loss_cfg;
        loss_cfg.temperature = 0.5;
        loss_cfg.prototype_mode = PrototypeMode::full;

        auto objective = [&](const Params& p) {
            const auto [emb, cache] = mlp_forward(spec, p, data.embeddings);
            switch (kind) {
                case LossKind::supcon: {
                    LabeledBatch b{emb, data.labels, std::nullopt};
                    return supcon_forward(b, loss_cfg).value;
                }
                case LossKind::protoclr: {
                    LabeledBatch b{emb, data.labels, std::nullopt};
                    return protoclr_forward(b, loss_cfg).value;
                }
                case LossKind::infonce: {
                    LabeledBatch b{emb, data.labels, std::nullopt};
                    return infonce_forward(b, loss_cfg).value;
                }
                case LossKind::ce:
                    return softmax_ce_forward(emb, data.labels).value;
            }
            return 0.0;
        };

        const auto [emb, cache] = mlp_forward(spec, params, data.embeddings);
        REQUIRE(min_abs_preactivation(cache) > 1e-3);

        LossResult loss;
        switch (kind) {
            case LossKind::supcon: {
                LabeledBatch b{emb, data.labels, std::nullopt};
                loss = supcon_forward(b, loss_cfg);
                break;
            }
            case LossKind::protoclr: {
                LabeledBatch b{emb, data.labels, std::nullopt};
                loss = protoclr_forward(b, loss_cfg);
                break;
            }
            case LossKind::infonce: {
                LabeledBatch b{emb, data.labels, std::nullopt};
                loss = infonce_forward(b, loss_cfg);
                break;
            }
            case LossKind::ce:
                loss = softmax_ce_forward(emb, data.labels);
                break;
        }
        const auto [grads, input_grad] = mlp_backward(spec, params, cache, loss.grad);

        const double h = 1e-5;
        for (std::size_t l = 0; l < params.layers.size(); ++l) {
            Mat fd_w(params.layers[l].weights.rows(), params.layers[l].weights.cols());
            for (std::size_t i = 0; i < fd_w.size(); ++i) {
                Params p = params;
                p.layers[l].weights.data()[i] += h;
                const double up = objective(p);
                p.layers[l].weights.data()[i] -= 2 * h;
                const double down = objective(p);
                fd_w.data()[i] = (up - down) / (2 * h);
            }
            INFO("loss kind " << loss_kind_name(kind) << " layer " << l);
            CHECK(max_relative_error(fd_w, grads.layers[l].weights) < 1e-5);
        }
    }
}

// --- fit ---------------------------------------------------------------------------

TEST_CASE("fit: one epoch at zero learning rate keeps the initialization") {
    RngStream data_rng(41);
    LabeledBatch data = toy_clusters(8, 4, data_rng);

    MlpSpec spec{{4, 5, 3}, true};
    TrainConfig cfg;
    cfg.loss = LossKind::protoclr;
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.seed = 7;

    RngStream rng(cfg.seed);
    const auto [params, history] = fit(spec, data, cfg, rng);
    REQUIRE(history.epoch_loss.size() == 1);

    RngStream init_rng = RngStream(cfg.seed).substream(0);
    const Params expected = init_params(spec, init_rng);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        CHECK(params.layers[l].weights == expected.layers[l].weights);
        CHECK(params.layers[l].bias == expected.layers[l].bias);
    }
}

TEST_CASE("fit: prototype loss decreases on separable clusters") {
    RngStream data_rng(51);
    LabeledBatch data = toy_clusters(32, 8, data_rng);

    MlpSpec spec{{8, 16, 8}, true};
    TrainConfig cfg;
    cfg.loss = LossKind::protoclr;
    cfg.learning_rate = 5e-4;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.seed = 3;

    RngStream rng(cfg.seed);
    const auto [params, history] = fit(spec, data, cfg, rng);
    REQUIRE(history.epoch_loss.size() == 50);
    CHECK(history.epoch_loss.back() < history.epoch_loss.front());
}

TEST_CASE("fit: identical config and seed reproduce bit-identical parameters") {
    RngStream data_rng(61);
    LabeledBatch data = toy_clusters(16, 4, data_rng);

    MlpSpec spec{{4, 8, 4}, true};
    TrainConfig cfg;
    cfg.loss = LossKind::supcon;
    cfg.learning_rate = 1e-4;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 13;

    RngStream rng_a(cfg.seed), rng_b(cfg.seed);
    const auto [params_a, hist_a] = fit(spec, data, cfg, rng_a);
    const auto [params_b, hist_b] = fit(spec, data, cfg, rng_b);
    for (std::size_t l = 0; l < params_a.layers.size(); ++l) {
        CHECK(params_a.layers[l].weights == params_b.layers[l].weights);
        CHECK(params_a.layers[l].bias == params_b.layers[l].bias);
    }
    CHECK(hist_a.epoch_loss == hist_b.epoch_loss);
}

TEST_CASE("fit: dataset smaller than a batch raises") {
    RngStream data_rng(71);
    LabeledBatch data = toy_clusters(2, 4, data_rng); // 8 rows
    MlpSpec spec{{4, 4}, true};
    TrainConfig cfg;
    cfg.batch_size = 32;
    RngStream rng(1);
    CHECK_THROWS_MATCHES(fit(spec, data, cfg, rng), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::insufficient_data; }));
}

// --- checkpoints ----------------------------------------------------------------

TEST_CASE("checkpoint: encode/decode round-trips shapes and float32 values") {
    MlpSpec spec{{3, 5, 2}, true};
    RngStream rng(81);
    Params params = init_params(spec, rng);
    const std::string bytes = encode_checkpoint(spec, params);
    CHECK(bytes.substr(0, 4) == "MLP1");

    const auto [spec2, params2] = decode_checkpoint(bytes);
    CHECK(spec2.layer_dims == spec.layer_dims);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t i = 0; i < params.layers[l].weights.size(); ++i)
            CHECK(params2.layers[l].weights.data()[i] ==
                  (double)(float)params.layers[l].weights.data()[i]);
        for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i)
            CHECK(params2.layers[l].bias[i] == (double)(float)params.layers[l].bias[i]);
    }
    // a second encode of the decoded params is byte-identical
    CHECK(encode_checkpoint(spec2, params2) == bytes);
}

TEST_CASE("checkpoint: malformed magic and truncation raise") {
    MlpSpec spec{{2, 2}, true};
    RngStream rng(91);
    Params params = init_params(spec, rng);
    std::string bytes = encode_checkpoint(spec, params);

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_MATCHES(decode_checkpoint(bad), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::malformed_header; }));

    CHECK_THROWS_MATCHES(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::truncated_payload; }));
}
