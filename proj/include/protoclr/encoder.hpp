#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "protoclr/core.hpp"
#include "protoclr/losses.hpp"
#include "protoclr/prototypes.hpp"

namespace protoclr {

// Affine -> ReLU chain with an optional unit-norm head on the last layer.
struct MlpSpec {
    std::vector<int> layer_dims; // input, hidden..., output
    bool final_l2_normalize = true;

    int num_layers() const noexcept { return static_cast<int>(layer_dims.size()) - 1; }
    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }

    void validate() const {
        require(layer_dims.size() >= 2, Errc::invalid_argument, "MlpSpec: need at least one layer");
        for (int d : layer_dims)
            require(d >= 1, Errc::invalid_argument, "MlpSpec: all dims must be >= 1");
    }
};

struct Layer {
    Mat weights; // in x out
    Vec bias;    // out
};

struct Params {
    std::vector<Layer> layers;

    bool shape_matches(const MlpSpec& spec) const {
        if (static_cast<int>(layers.size()) != spec.num_layers()) return false;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].weights.rows() != spec.layer_dims[l]) return false;
            if (layers[l].weights.cols() != spec.layer_dims[l + 1]) return false;
            if (static_cast<int>(layers[l].bias.size()) != spec.layer_dims[l + 1]) return false;
        }
        return true;
    }
};

inline Params init_params(const MlpSpec& spec, RngStream& rng) {
    spec.validate();
    Params params;
    params.layers.resize(static_cast<std::size_t>(spec.num_layers()));
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int fan_in = spec.layer_dims[static_cast<std::size_t>(l)];
        const int fan_out = spec.layer_dims[static_cast<std::size_t>(l) + 1];
        const double scale = std::sqrt(2.0 / fan_in); // He init for the ReLU chain
        auto& layer = params.layers[static_cast<std::size_t>(l)];
        layer.weights = Mat(fan_in, fan_out);
        for (int r = 0; r < fan_in; ++r)
            for (int c = 0; c < fan_out; ++c) layer.weights(r, c) = scale * rng.next_normal();
        // small positive bias keeps ReLU rows alive and norm-head inputs off zero
        layer.bias.assign(static_cast<std::size_t>(fan_out), 0.01);
    }
    return params;
}

struct ForwardCache {
    bool valid = false;
    std::vector<Mat> layer_inputs; // input to each affine layer
    std::vector<Mat> pre_activations;
    Mat pre_norm;            // last layer output before the norm head
    std::vector<double> norms; // per-row norms when the head is active
    bool normalized = false;
    int batch_rows = 0;
    int output_dim = 0;
};

inline std::pair<Mat, ForwardCache> mlp_forward(const MlpSpec& spec, const Params& params, const Mat& x) {
    spec.validate();
    require(params.shape_matches(spec), Errc::shape_mismatch, "mlp_forward: params do not match spec");
    require(x.cols() == spec.input_dim(), Errc::shape_mismatch, "mlp_forward: input dim mismatch");

    ForwardCache cache;
    cache.layer_inputs.reserve(static_cast<std::size_t>(spec.num_layers()));
    cache.pre_activations.reserve(static_cast<std::size_t>(spec.num_layers()));

    Mat current = x;
    const int n = x.rows();
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto& layer = params.layers[static_cast<std::size_t>(l)];
        cache.layer_inputs.push_back(current);
        Mat out(n, layer.weights.cols());
        for (int r = 0; r < n; ++r) {
            const auto in_row = current.row(r);
            auto out_row = out.row(r);
            for (int c = 0; c < layer.weights.cols(); ++c) out_row[c] = layer.bias[static_cast<std::size_t>(c)];
            for (int k = 0; k < layer.weights.rows(); ++k) {
                const double v = in_row[k];
                if (v == 0.0) continue;
                const auto w_row = layer.weights.row(k);
                for (int c = 0; c < layer.weights.cols(); ++c) out_row[c] += v * w_row[c];
            }
        }
        cache.pre_activations.push_back(out);
        if (l + 1 < spec.num_layers()) {
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < out.cols(); ++c)
                    if (out(r, c) < 0.0) out(r, c) = 0.0; // ReLU; subgradient at 0 is 0
        }
        current = std::move(out);
    }

    cache.pre_norm = current;
    cache.normalized = spec.final_l2_normalize;
    if (spec.final_l2_normalize) {
        cache.norms.resize(static_cast<std::size_t>(n));
        for (int r = 0; r < n; ++r) {
            auto row = current.row(r);
            const double nr = norm(row);
            require(nr > kZeroNormTolerance, Errc::zero_norm, "mlp_forward: zero-norm output row");
            cache.norms[static_cast<std::size_t>(r)] = nr;
            for (double& v : row) v /= nr;
        }
    }
    cache.valid = true;
    cache.batch_rows = n;
    cache.output_dim = current.cols();
    return {std::move(current), std::move(cache)};
}

struct ParamGrads {
    std::vector<Layer> layers; // same shapes as Params
};

inline ParamGrads zero_grads_like(const Params& params) {
    ParamGrads grads;
    grads.layers.resize(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        grads.layers[l].weights = Mat(params.layers[l].weights.rows(), params.layers[l].weights.cols());
        grads.layers[l].bias.assign(params.layers[l].bias.size(), 0.0);
    }
    return grads;
}

// Exact gradients of <upstream, forward(x)> w.r.t. parameters and input.
// With the norm head active the upstream gradient first passes through the
// per-row Jacobian (I - zz^T)/|z|.
inline std::pair<ParamGrads, Mat> mlp_backward(const MlpSpec& spec, const Params& params,
                                               const ForwardCache& cache, const Mat& upstream) {
    require(cache.valid, Errc::stale_cache, "mlp_backward: cache not produced by mlp_forward");
    require(upstream.rows() == cache.batch_rows && upstream.cols() == cache.output_dim, Errc::stale_cache,
            "mlp_backward: upstream shape does not match cached forward pass");
    require(params.shape_matches(spec), Errc::shape_mismatch, "mlp_backward: params do not match spec");

    const int n = upstream.rows();
    Mat delta = upstream;

    if (cache.normalized) {
        for (int r = 0; r < n; ++r) {
            const double nr = cache.norms[static_cast<std::size_t>(r)];
            auto d_row = delta.row(r);
            Vec z_hat(static_cast<std::size_t>(delta.cols()));
            for (int c = 0; c < delta.cols(); ++c)
                z_hat[static_cast<std::size_t>(c)] = cache.pre_norm(r, c) / nr;
            const double along = dot(std::span<const double>(d_row), std::span<const double>(z_hat));
            for (int c = 0; c < delta.cols(); ++c)
                d_row[c] = (d_row[c] - along * z_hat[static_cast<std::size_t>(c)]) / nr;
        }
    }

    ParamGrads grads = zero_grads_like(params);
    for (int l = spec.num_layers() - 1; l >= 0; --l) {
        const auto& layer = params.layers[static_cast<std::size_t>(l)];
        const Mat& input = cache.layer_inputs[static_cast<std::size_t>(l)];
        auto& g = grads.layers[static_cast<std::size_t>(l)];

        if (l != spec.num_layers() - 1) {
            const Mat& pre = cache.pre_activations[static_cast<std::size_t>(l)];
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < delta.cols(); ++c)
                    if (pre(r, c) <= 0.0) delta(r, c) = 0.0;
        }

        for (int r = 0; r < n; ++r) {
            const auto in_row = input.row(r);
            const auto d_row = delta.row(r);
            for (int k = 0; k < layer.weights.rows(); ++k) {
                const double v = in_row[k];
                if (v == 0.0) continue;
                auto gw_row = g.weights.row(k);
                for (int c = 0; c < layer.weights.cols(); ++c) gw_row[c] += v * d_row[c];
            }
            for (int c = 0; c < layer.weights.cols(); ++c) g.bias[static_cast<std::size_t>(c)] += d_row[c];
        }

        Mat prev(n, layer.weights.rows());
        for (int r = 0; r < n; ++r) {
            const auto d_row = delta.row(r);
            auto p_row = prev.row(r);
            for (int k = 0; k < layer.weights.rows(); ++k) {
                const auto w_row = layer.weights.row(k);
                double s = 0.0;
                for (int c = 0; c < layer.weights.cols(); ++c) s += w_row[c] * d_row[c];
                p_row[k] = s;
            }
        }
        delta = std::move(prev);
    }

    return {std::move(grads), std::move(delta)};
}

// --- optimizers ------------------------------------------------------------

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamWState {
    std::vector<Layer> m;
    std::vector<Layer> v;
    long long step = 0;
};

inline AdamWState adamw_init(const Params& params) {
    AdamWState state;
    state.m = zero_grads_like(params).layers;
    state.v = zero_grads_like(params).layers;
    return state;
}

namespace detail {

inline void adamw_update(double& p, double g, double& m, double& v, double lr, double wd,
                         const AdamWConfig& cfg, double bc1, double bc2) {
    p -= lr * wd * p; // decoupled decay, independent of the adaptive step
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    p -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
}

} // namespace detail

inline void adamw_step(Params& params, const ParamGrads& grads, AdamWState& state, double lr, double wd,
                       const AdamWConfig& cfg = {}) {
    require(params.layers.size() == grads.layers.size() && params.layers.size() == state.m.size(),
            Errc::shape_mismatch, "adamw_step: layer count mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& p = params.layers[l];
        const auto& g = grads.layers[l];
        require(p.weights.same_shape(g.weights) && p.bias.size() == g.bias.size(), Errc::shape_mismatch,
                "adamw_step: gradient shape mismatch at layer " + std::to_string(l));
        auto& m = state.m[l];
        auto& v = state.v[l];
        for (std::size_t i = 0; i < p.weights.size(); ++i)
            detail::adamw_update(p.weights.data()[i], g.weights.data()[i], m.weights.data()[i],
                                 v.weights.data()[i], lr, wd, cfg, bc1, bc2);
        for (std::size_t i = 0; i < p.bias.size(); ++i)
            detail::adamw_update(p.bias[i], g.bias[i], m.bias[i], v.bias[i], lr, wd, cfg, bc1, bc2);
    }
}

inline void sgd_step(Params& params, const ParamGrads& grads, double lr, double wd) {
    require(params.layers.size() == grads.layers.size(), Errc::shape_mismatch,
            "sgd_step: layer count mismatch");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& p = params.layers[l];
        const auto& g = grads.layers[l];
        require(p.weights.same_shape(g.weights) && p.bias.size() == g.bias.size(), Errc::shape_mismatch,
                "sgd_step: gradient shape mismatch at layer " + std::to_string(l));
        for (std::size_t i = 0; i < p.weights.size(); ++i) {
            double& w = p.weights.data()[i];
            w -= lr * wd * w;
            w -= lr * g.weights.data()[i];
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
            p.bias[i] -= lr * wd * p.bias[i];
            p.bias[i] -= lr * g.bias[i];
        }
    }
}

// --- training --------------------------------------------------------------

enum class LossKind { supcon, protoclr, infonce, ce };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::supcon: return "supcon";
        case LossKind::protoclr: return "protoclr";
        case LossKind::infonce: return "infonce";
        case LossKind::ce: return "ce";
    }
    return "?";
}

enum class OptimizerKind { sgd, adamw };

struct TrainConfig {
    LossKind loss = LossKind::protoclr;
    double temperature = 0.5;
    double learning_rate = 5e-4;
    double weight_decay = 1e-6;
    int batch_size = 64;
    int epochs = 50;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adamw;
    AdamWConfig adamw;
    AnchorWeight anchor_weight = AnchorWeight::uniform;
    PrototypeMode prototype_mode = PrototypeMode::full; // exact-gradient training

    void validate() const {
        require(learning_rate >= 0.0, Errc::invalid_argument, "TrainConfig: learning rate must be >= 0");
        require(batch_size >= 2, Errc::invalid_argument, "TrainConfig: batch size must be >= 2");
        require(epochs >= 1, Errc::invalid_argument, "TrainConfig: epochs must be >= 1");
        require(temperature > 0.0, Errc::non_positive_temperature, "TrainConfig: temperature must be > 0");
    }
};

struct TrainHistory {
    std::vector<double> epoch_loss; // mean per-batch loss value
};

namespace detail {

// Mini-batches for the contrastive losses are built from same-(class,domain)
// pairs: two independent draws of the same source stand in for two views.
inline std::vector<std::vector<int>> paired_batches(const LabeledBatch& data, int batch_size,
                                                    RngStream& rng) {
    std::map<std::pair<int, int>, std::vector<int>> groups;
    for (int i = 0; i < data.rows(); ++i) {
        const int dom = data.domains ? (*data.domains)[static_cast<std::size_t>(i)] : 0;
        groups[{data.labels[static_cast<std::size_t>(i)], dom}].push_back(i);
    }
    std::vector<std::pair<int, int>> pairs;
    for (auto& [key, members] : groups) {
        rng.shuffle(members);
        for (std::size_t j = 0; j + 1 < members.size(); j += 2)
            pairs.emplace_back(members[j], members[j + 1]);
    }
    rng.shuffle(pairs);

    const int pairs_per_batch = batch_size / 2;
    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start + static_cast<std::size_t>(pairs_per_batch) <= pairs.size();
         start += static_cast<std::size_t>(pairs_per_batch)) {
        std::vector<int> batch;
        batch.reserve(static_cast<std::size_t>(batch_size));
        for (int p = 0; p < pairs_per_batch; ++p) {
            batch.push_back(pairs[start + static_cast<std::size_t>(p)].first);
            batch.push_back(pairs[start + static_cast<std::size_t>(p)].second);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

inline std::vector<std::vector<int>> plain_batches(int n, int batch_size, RngStream& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start + batch_size <= n; start += batch_size)
        batches.emplace_back(order.begin() + start, order.begin() + start + batch_size);
    return batches;
}

} // namespace detail

// Deterministic mini-batch training loop. The last incomplete batch of each
// epoch is dropped.
inline std::pair<Params, TrainHistory> fit(const MlpSpec& spec, const LabeledBatch& data,
                                           const TrainConfig& cfg, RngStream& rng) {
    spec.validate();
    cfg.validate();
    data.validate();
    require(data.rows() >= cfg.batch_size, Errc::insufficient_data,
            "fit: dataset smaller than one batch");

    RngStream init_rng = rng.substream(0);
    Params params = init_params(spec, init_rng);
    AdamWState adamw_state = adamw_init(params);

    LossConfig loss_cfg;
    loss_cfg.temperature = cfg.temperature;
    loss_cfg.anchor_weight = cfg.anchor_weight;
    loss_cfg.prototype_mode = cfg.prototype_mode;

    const bool paired = cfg.loss == LossKind::supcon || cfg.loss == LossKind::protoclr ||
                        cfg.loss == LossKind::infonce;

    TrainHistory history;
    history.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream epoch_rng = rng.substream(static_cast<std::uint64_t>(epoch) + 1);
        const auto batches = paired
                                 ? detail::paired_batches(data, cfg.batch_size, epoch_rng)
                                 : detail::plain_batches(data.rows(), cfg.batch_size, epoch_rng);
        require(!batches.empty(), Errc::insufficient_data, "fit: no full batch could be formed");

        double loss_sum = 0.0;
        for (const auto& batch_indices : batches) {
            const int bn = static_cast<int>(batch_indices.size());
            Mat x(bn, data.dim());
            std::vector<int> labels(static_cast<std::size_t>(bn));
            for (int r = 0; r < bn; ++r) {
                const int src = batch_indices[static_cast<std::size_t>(r)];
                for (int c = 0; c < data.dim(); ++c) x(r, c) = data.embeddings(src, c);
                labels[static_cast<std::size_t>(r)] = data.labels[static_cast<std::size_t>(src)];
            }

            auto [embeddings, cache] = mlp_forward(spec, params, x);

            LossResult loss;
            switch (cfg.loss) {
                case LossKind::supcon: {
                    LabeledBatch b{std::move(embeddings), labels, std::nullopt};
                    loss = supcon_forward(b, loss_cfg);
                    break;
                }
                case LossKind::protoclr: {
                    LabeledBatch b{std::move(embeddings), labels, std::nullopt};
                    loss = protoclr_forward(b, loss_cfg);
                    break;
                }
                case LossKind::infonce: {
                    LabeledBatch b{std::move(embeddings), labels, std::nullopt};
                    loss = infonce_forward(b, loss_cfg);
                    break;
                }
                case LossKind::ce: {
                    loss = softmax_ce_forward(embeddings, labels);
                    break;
                }
            }

            auto [grads, input_grad] = mlp_backward(spec, params, cache, loss.grad);
            (void)input_grad;
            if (cfg.optimizer == OptimizerKind::adamw)
                adamw_step(params, grads, adamw_state, cfg.learning_rate, cfg.weight_decay, cfg.adamw);
            else
                sgd_step(params, grads, cfg.learning_rate, cfg.weight_decay);
            loss_sum += loss.value;
        }
        history.epoch_loss.push_back(loss_sum / static_cast<double>(batches.size()));
    }

    return {std::move(params), std::move(history)};
}

// --- checkpoint format ------------------------------------------------------
// "MLP1" | u32 layer count L | u32 dims[L+1] | per layer: weights (in*out
// float32, row-major) then bias (out float32); all little-endian.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
}

struct ByteReader {
    const std::string& bytes;
    std::size_t pos = 0;

    bool has(std::size_t count) const { return pos + count <= bytes.size(); }

    std::uint32_t u32() {
        require(has(4), Errc::truncated_payload, "unexpected end of file");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]);
        pos += 4;
        return v;
    }

    double f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, sizeof f);
        return static_cast<double>(f);
    }

    std::uint8_t u8() {
        require(has(1), Errc::truncated_payload, "unexpected end of file");
        return static_cast<std::uint8_t>(bytes[pos++]);
    }
};

inline std::string read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    require(f != nullptr, Errc::io_failure, "cannot open " + path);
    std::string bytes;
    char buf[1 << 16];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, got);
    std::fclose(f);
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    require(f != nullptr, Errc::io_failure, "cannot open for writing: " + path);
    const std::size_t put = std::fwrite(bytes.data(), 1, bytes.size(), f);
    const int closed = std::fclose(f);
    require(put == bytes.size() && closed == 0, Errc::io_failure, "short write: " + path);
}

} // namespace detail

inline std::string encode_checkpoint(const MlpSpec& spec, const Params& params) {
    spec.validate();
    require(params.shape_matches(spec), Errc::shape_mismatch, "encode_checkpoint: params do not match spec");
    std::string out = "MLP1";
    detail::put_u32(out, static_cast<std::uint32_t>(spec.num_layers()));
    for (int d : spec.layer_dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (const auto& layer : params.layers) {
        for (std::size_t i = 0; i < layer.weights.size(); ++i) detail::put_f32(out, layer.weights.data()[i]);
        for (double b : layer.bias) detail::put_f32(out, b);
    }
    return out;
}

inline std::pair<MlpSpec, Params> decode_checkpoint(const std::string& bytes) {
    require(bytes.size() >= 4 && bytes.compare(0, 4, "MLP1") == 0, Errc::malformed_header,
            "not an MLP1 checkpoint");
    detail::ByteReader r{bytes, 4};
    const std::uint32_t num_layers = r.u32();
    require(num_layers >= 1 && num_layers <= 64, Errc::malformed_header, "implausible layer count");
    MlpSpec spec;
    spec.layer_dims.resize(static_cast<std::size_t>(num_layers) + 1);
    for (auto& d : spec.layer_dims) {
        const std::uint32_t v = r.u32();
        require(v >= 1 && v <= (1u << 20), Errc::malformed_header, "implausible layer dim");
        d = static_cast<int>(v);
    }
    Params params;
    params.layers.resize(num_layers);
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        const int fan_in = spec.layer_dims[l];
        const int fan_out = spec.layer_dims[l + 1];
        auto& layer = params.layers[l];
        layer.weights = Mat(fan_in, fan_out);
        for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = r.f32();
        layer.bias.resize(static_cast<std::size_t>(fan_out));
        for (double& b : layer.bias) b = r.f32();
    }
    require(r.pos == bytes.size(), Errc::truncated_payload, "trailing bytes after checkpoint payload");
    return {std::move(spec), std::move(params)};
}

inline void save_checkpoint(const std::string& path, const MlpSpec& spec, const Params& params) {
    detail::write_file_bytes(path, encode_checkpoint(spec, params));
}

inline std::pair<MlpSpec, Params> load_checkpoint(const std::string& path) {
    return decode_checkpoint(detail::read_file_bytes(path));
}

} // namespace protoclr
