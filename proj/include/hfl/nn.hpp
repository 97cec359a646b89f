#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/data.hpp"

// From-scratch fully-connected network: deterministic Glorot init, forward
// pass, binary cross-entropy, exact backprop, minibatch SGD, and the flat
// parameter layout the federation tiers exchange.
//
// Numeric contract: parameters and activations are float32; dot products,
// losses and gradient accumulation run in float64 before rounding back.
namespace hfl::nn {

enum class Activation : std::uint8_t { relu = 0, sigmoid = 1 };

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::relu;
};

using Arch = std::vector<LayerSpec>;

inline void validate_arch(const Arch& arch) {
    if (arch.empty()) throw ShapeError("model needs at least one layer");
    for (const auto& l : arch)
        if (l.in_dim < 1 || l.out_dim < 1) throw ShapeError("layer dims must be >= 1");
    for (std::size_t i = 0; i + 1 < arch.size(); ++i)
        if (arch[i].out_dim != arch[i + 1].in_dim)
            throw ShapeError("dim mismatch " + std::to_string(arch[i].out_dim) + "≠" +
                             std::to_string(arch[i + 1].in_dim) + " between layers " +
                             std::to_string(i) + " and " + std::to_string(i + 1));
}

inline std::size_t param_count(const Arch& arch) {
    std::size_t n = 0;
    for (const auto& l : arch) n += l.in_dim * l.out_dim + l.out_dim;
    return n;
}

// Architecture fingerprint carried by every ParamVector; aggregation and
// set_params refuse mismatched digests.
inline std::uint64_t arch_digest(const Arch& arch) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& l : arch) {
        h = fnv1a64(static_cast<std::uint64_t>(l.in_dim), h);
        h = fnv1a64(static_cast<std::uint64_t>(l.out_dim), h);
        h = fnv1a64(static_cast<std::uint64_t>(l.activation), h);
    }
    return h;
}

struct ParamVector {
    std::vector<float> values;
    std::uint64_t layout_digest = 0;
};

struct Gradients {
    std::vector<float> values;
    std::uint64_t layout_digest = 0;
};

struct Hyperparams {
    double learning_rate = 0.01;
    std::size_t batch_size = 512;
    std::size_t local_epochs = 1;
    double classification_threshold = 0.5;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
        if (!(classification_threshold > 0.0 && classification_threshold < 1.0))
            throw ConfigError("classification_threshold must be in (0, 1)");
    }
};

struct Layer {
    Matrix weights;              // out_dim x in_dim, row-major
    std::vector<float> biases;   // out_dim
    Activation activation = Activation::relu;
};

class Model {
public:
    Model() = default;
    Model(Arch arch, std::vector<Layer> layers, std::uint64_t seed)
        : arch_(std::move(arch)), layers_(std::move(layers)), seed_(seed) {}

    const Arch& arch() const { return arch_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    std::uint64_t seed() const { return seed_; }

    std::size_t input_dim() const { return arch_.front().in_dim; }
    std::size_t n_params() const { return param_count(arch_); }
    std::uint64_t digest() const { return arch_digest(arch_); }

private:
    Arch arch_;
    std::vector<Layer> layers_;
    std::uint64_t seed_ = 0;
};

// Glorot-uniform weights (symmetric range scaled by fan-in + fan-out), zero
// biases, fully determined by the seed. The final layer must be a
// single-unit sigmoid head.
inline Model init_model(const Arch& arch, std::uint64_t seed) {
    validate_arch(arch);
    if (arch.back().activation != Activation::sigmoid || arch.back().out_dim != 1)
        throw ShapeError("final layer must be sigmoid with out_dim 1");
    Rng rng(seed);
    std::vector<Layer> layers;
    layers.reserve(arch.size());
    for (const auto& spec : arch) {
        Layer layer;
        layer.activation = spec.activation;
        layer.weights = Matrix(spec.out_dim, spec.in_dim);
        const double limit =
            std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
        for (auto& w : layer.weights.data) w = static_cast<float>(rng.uniform(-limit, limit));
        layer.biases.assign(spec.out_dim, 0.0f);
        layers.push_back(std::move(layer));
    }
    return Model(arch, std::move(layers), seed);
}

namespace detail {

// Sigmoid outputs are clamped to the widest float32 interval strictly inside
// (0, 1); without the ceiling a saturated unit rounds to exactly 1.0f.
inline constexpr float kProbFloor = 1e-12f;
inline constexpr float kProbCeil = 0x1.fffffep-1f;

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Matrix layer_forward(const Layer& layer, const Matrix& input, Matrix* pre_activation) {
    const std::size_t n = input.rows;
    const std::size_t out = layer.weights.rows;
    const std::size_t in = layer.weights.cols;
    Matrix result(n, out);
    for (std::size_t i = 0; i < n; ++i) {
        const float* x = input.row(i);
        for (std::size_t o = 0; o < out; ++o) {
            const float* w = layer.weights.row(o);
            double acc = static_cast<double>(layer.biases[o]);
            for (std::size_t k = 0; k < in; ++k)
                acc += static_cast<double>(w[k]) * static_cast<double>(x[k]);
            if (pre_activation) pre_activation->at(i, o) = static_cast<float>(acc);
            if (layer.activation == Activation::relu) {
                result.at(i, o) = acc > 0.0 ? static_cast<float>(acc) : 0.0f;
            } else {
                result.at(i, o) = std::clamp(static_cast<float>(sigmoid(acc)), kProbFloor, kProbCeil);
            }
        }
    }
    return result;
}

inline void check_batch(const Model& model, const Matrix& batch) {
    if (batch.cols != model.input_dim())
        throw ShapeError("batch has " + std::to_string(batch.cols) + " features, model expects " +
                         std::to_string(model.input_dim()));
    if (!batch.all_finite()) throw DataError("batch contains non-finite values");
}

}  // namespace detail

inline std::vector<float> forward(const Model& model, const Matrix& batch) {
    detail::check_batch(model, batch);
    Matrix act = batch;
    for (const auto& layer : model.layers()) act = detail::layer_forward(layer, act, nullptr);
    return std::move(act.data);  // final layer is out_dim 1
}

// Mean binary cross-entropy, probabilities clamped to [eps, 1 - eps] before
// the logs so the loss stays finite over the whole closed unit interval.
inline constexpr double kBceEpsilon = 1e-7;

inline double bce_loss(std::span<const float> probs, std::span<const std::uint8_t> labels) {
    if (probs.size() != labels.size())
        throw ShapeError("bce_loss: " + std::to_string(probs.size()) + " probs vs " +
                         std::to_string(labels.size()) + " labels");
    if (probs.empty()) throw ShapeError("bce_loss: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(static_cast<double>(probs[i]), kBceEpsilon, 1.0 - kBceEpsilon);
        sum += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return sum / static_cast<double>(probs.size());
}

// Gradient of bce_loss(forward(.)) for every parameter, flat layout matching
// get_params: per layer, weight rows then biases. Uses the standard
// sigmoid-BCE simplification dL/dz = (p - y)/n, which coincides with the
// clamped loss everywhere outside the |z| > 16 saturation zone (where the
// clamp makes the loss flat). When loss_out is given it receives the batch
// BCE, sparing callers a second forward pass.
inline Gradients backward(const Model& model, const Matrix& batch,
                          std::span<const std::uint8_t> labels, double* loss_out = nullptr) {
    detail::check_batch(model, batch);
    const std::size_t n = batch.rows;
    if (labels.size() != n)
        throw ShapeError("backward: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");

    const auto& layers = model.layers();
    const std::size_t L = layers.size();

    // forward, keeping every activation and pre-activation
    std::vector<Matrix> acts;   // acts[0] = input, acts[l+1] = output of layer l
    std::vector<Matrix> zs(L);  // pre-activations
    acts.reserve(L + 1);
    acts.push_back(batch);
    for (std::size_t l = 0; l < L; ++l) {
        zs[l] = Matrix(acts[l].rows, layers[l].weights.rows);
        acts.push_back(detail::layer_forward(layers[l], acts[l], &zs[l]));
    }

    if (loss_out) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = std::clamp(static_cast<double>(acts[L].at(i, 0)), kBceEpsilon,
                                        1.0 - kBceEpsilon);
            sum += labels[i] ? -std::log(p) : -std::log(1.0 - p);
        }
        *loss_out = sum / static_cast<double>(n);
    }

    // output delta: dL/dz = (p - y) / n through the sigmoid head
    Matrix delta(n, 1);
    for (std::size_t i = 0; i < n; ++i)
        delta.at(i, 0) = static_cast<float>(
            (static_cast<double>(acts[L].at(i, 0)) - static_cast<double>(labels[i])) /
            static_cast<double>(n));

    Gradients grads;
    grads.layout_digest = model.digest();
    grads.values.assign(model.n_params(), 0.0f);

    // per-layer slice offsets into the flat gradient vector
    std::vector<std::size_t> offsets(L);
    std::size_t off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        offsets[l] = off;
        off += layers[l].weights.data.size() + layers[l].biases.size();
    }

    std::vector<double> w_acc, b_acc, row_acc;
    for (std::size_t l = L; l-- > 0;) {
        const Layer& layer = layers[l];
        const Matrix& a_prev = acts[l];
        const std::size_t out = layer.weights.rows;
        const std::size_t in = layer.weights.cols;

        // accumulate dW and db in 64-bit, samples in ascending order
        w_acc.assign(out * in, 0.0);
        b_acc.assign(out, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const float* dz = delta.row(i);
            const float* a = a_prev.row(i);
            for (std::size_t o = 0; o < out; ++o) {
                const double dzo = dz[o];
                if (dzo == 0.0) continue;
                double* wrow = w_acc.data() + o * in;
                for (std::size_t k = 0; k < in; ++k) wrow[k] += dzo * static_cast<double>(a[k]);
                b_acc[o] += dzo;
            }
        }
        float* dW = grads.values.data() + offsets[l];
        for (std::size_t j = 0; j < out * in; ++j) dW[j] = static_cast<float>(w_acc[j]);
        float* db = dW + out * in;
        for (std::size_t o = 0; o < out; ++o) db[o] = static_cast<float>(b_acc[o]);

        if (l == 0) break;
        Matrix next(n, in);
        for (std::size_t i = 0; i < n; ++i) {
            row_acc.assign(in, 0.0);
            const float* dz = delta.row(i);
            for (std::size_t o = 0; o < out; ++o) {
                const double dzo = dz[o];
                if (dzo == 0.0) continue;
                const float* w = layer.weights.row(o);
                for (std::size_t k = 0; k < in; ++k) row_acc[k] += dzo * static_cast<double>(w[k]);
            }
            // ReLU gate of the producing layer
            const float* z = zs[l - 1].row(i);
            float* nx = next.row(i);
            for (std::size_t k = 0; k < in; ++k)
                nx[k] = z[k] > 0.0f ? static_cast<float>(row_acc[k]) : 0.0f;
        }
        delta = std::move(next);
    }
    return grads;
}

inline Model sgd_step(const Model& model, const Gradients& grads, double learning_rate) {
    if (!(learning_rate >= 0.0)) throw ConfigError("sgd_step: negative learning rate");
    if (grads.layout_digest != model.digest() || grads.values.size() != model.n_params())
        throw ShapeError("sgd_step: gradient shape does not match model");
    Model out = model;
    std::size_t idx = 0;
    for (auto& layer : out.layers()) {
        for (auto& w : layer.weights.data)
            w = static_cast<float>(static_cast<double>(w) -
                                   learning_rate * static_cast<double>(grads.values[idx++]));
        for (auto& b : layer.biases)
            b = static_cast<float>(static_cast<double>(b) -
                                   learning_rate * static_cast<double>(grads.values[idx++]));
    }
    return out;
}

// ---- flat parameter layout: per layer, W row-major (rows = output units)
// then biases, layers in forward order ----

inline ParamVector get_params(const Model& model) {
    ParamVector pv;
    pv.layout_digest = model.digest();
    pv.values.reserve(model.n_params());
    for (const auto& layer : model.layers()) {
        pv.values.insert(pv.values.end(), layer.weights.data.begin(), layer.weights.data.end());
        pv.values.insert(pv.values.end(), layer.biases.begin(), layer.biases.end());
    }
    return pv;
}

inline Model set_params(const Model& model, const ParamVector& pv) {
    if (pv.layout_digest != model.digest())
        throw ShapeError("set_params: incompatible architecture digest");
    if (pv.values.size() != model.n_params())
        throw ShapeError("set_params: vector has " + std::to_string(pv.values.size()) +
                         " values, model has " + std::to_string(model.n_params()) +
                         " parameters");
    Model out = model;
    std::size_t idx = 0;
    for (auto& layer : out.layers()) {
        for (auto& w : layer.weights.data) w = pv.values[idx++];
        for (auto& b : layer.biases) b = pv.values[idx++];
    }
    return out;
}

// ---- training ----

struct TrainResult {
    Model model;
    std::vector<double> epoch_losses;  // mean training loss per epoch
};

// Minibatch SGD with seeded shuffling. The shuffle of epoch k is a pure
// function of (seed, epoch_offset + k), so a run of R * e epochs can be
// replayed as R rounds of e epochs against the same schedule.
inline TrainResult train_epochs(const Model& model, const data::Dataset& shard,
                                const Hyperparams& hp, std::uint64_t seed,
                                std::uint64_t epoch_offset = 0) {
    hp.validate();
    if (shard.n() == 0) throw DataError("train_epochs: empty shard");
    if (shard.dim() != model.input_dim())
        throw ShapeError("train_epochs: shard has " + std::to_string(shard.dim()) +
                         " features, model expects " + std::to_string(model.input_dim()));

    TrainResult result{model, {}};
    const std::size_t n = shard.n();
    const std::size_t d = shard.dim();
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 0; epoch < hp.local_epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(mix_seed(seed, epoch_offset + epoch));
        rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += hp.batch_size) {
            const std::size_t count = std::min(hp.batch_size, n - start);
            Matrix xb(count, d);
            std::vector<std::uint8_t> yb(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t row = order[start + i];
                std::copy_n(shard.features.row(row), d, xb.row(i));
                yb[i] = shard.labels[row];
            }
            const auto probs = forward(result.model, xb);
            const double batch_loss = bce_loss(probs, yb);
            if (!std::isfinite(batch_loss))
                throw DivergedError("training diverged at epoch " +
                                    std::to_string(epoch_offset + epoch) + ", batch " +
                                    std::to_string(start / hp.batch_size));
            const auto grads = backward(result.model, xb, yb);
            result.model = sgd_step(result.model, grads, hp.learning_rate);
            loss_sum += batch_loss * static_cast<double>(count);
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(n));
    }
    return result;
}

// Mean BCE over a whole dataset, evaluated in fixed-size chunks.
inline double dataset_loss(const Model& model, const data::Dataset& ds,
                           std::size_t chunk = 8192) {
    if (ds.n() == 0) throw DataError("dataset_loss: empty dataset");
    double sum = 0.0;
    const std::size_t d = ds.dim();
    for (std::size_t start = 0; start < ds.n(); start += chunk) {
        const std::size_t count = std::min(chunk, ds.n() - start);
        Matrix xb(count, d);
        std::copy_n(ds.features.row(start), count * d, xb.data.begin());
        const auto probs = forward(model, xb);
        for (std::size_t i = 0; i < count; ++i) {
            const double p =
                std::clamp(static_cast<double>(probs[i]), kBceEpsilon, 1.0 - kBceEpsilon);
            sum += ds.labels[start + i] ? -std::log(p) : -std::log(1.0 - p);
        }
    }
    return sum / static_cast<double>(ds.n());
}

}  // namespace hfl::nn
