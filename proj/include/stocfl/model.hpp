#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stocfl/error.hpp"
#include "stocfl/rng.hpp"

namespace stocfl {

/// Architecture of a fully connected softmax classifier. An empty
/// hidden_dims means plain multinomial logistic regression; otherwise each
/// hidden layer uses ReLU.
struct ModelSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int num_classes = 0;

    bool operator==(const ModelSpec&) const = default;
};

inline void validate(const ModelSpec& spec) {
    if (spec.input_dim < 1) throw value_error("ModelSpec: input_dim must be >= 1");
    if (spec.num_classes < 2) throw value_error("ModelSpec: num_classes must be >= 2");
    for (int h : spec.hidden_dims)
        if (h < 1) throw value_error("ModelSpec: hidden dims must be >= 1");
}

// Layer dims as [input, hidden..., num_classes].
inline std::vector<int> layer_dims(const ModelSpec& spec) {
    std::vector<int> dims;
    dims.reserve(spec.hidden_dims.size() + 2);
    dims.push_back(spec.input_dim);
    for (int h : spec.hidden_dims) dims.push_back(h);
    dims.push_back(spec.num_classes);
    return dims;
}

// Total parameter count: per layer (fan_in + 1) * fan_out, no instantiation.
inline std::size_t param_count(const ModelSpec& spec) {
    auto dims = layer_dims(spec);
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
        total += static_cast<std::size_t>(dims[l] + 1) * static_cast<std::size_t>(dims[l + 1]);
    return total;
}

/// Flat parameter vector. Layout per layer: weights row-major
/// (fan_out rows of fan_in entries, one row per output unit), then biases.
struct ModelParams {
    ModelSpec spec;
    std::vector<double> values;
};

/// One client's data: row-major n x d feature matrix plus integer labels.
struct DatasetShard {
    int feature_dim = 0;
    std::vector<double> features;
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
    std::span<const double> row(int i) const {
        return {features.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(feature_dim),
                static_cast<std::size_t>(feature_dim)};
    }
};

namespace detail {

inline void check_compat(const ModelParams& params, const DatasetShard& shard) {
    if (shard.feature_dim != params.spec.input_dim)
        throw dimension_error("shard feature_dim " + std::to_string(shard.feature_dim) +
                              " does not match model input_dim " +
                              std::to_string(params.spec.input_dim));
    if (shard.size() < 1) throw value_error("shard has no samples");
    for (int y : shard.labels)
        if (y < 0 || y >= params.spec.num_classes)
            throw value_error("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(params.spec.num_classes) + ")");
    if (params.values.size() != param_count(params.spec))
        throw dimension_error("parameter vector length does not match spec");
}

// Offsets of (weights, biases) per layer inside the flat vector.
struct LayerView {
    std::size_t w_off, b_off;
    int fan_in, fan_out;
};

inline std::vector<LayerView> layer_views(const ModelSpec& spec) {
    auto dims = layer_dims(spec);
    std::vector<LayerView> views;
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        LayerView v;
        v.fan_in = dims[l];
        v.fan_out = dims[l + 1];
        v.w_off = off;
        v.b_off = off + static_cast<std::size_t>(v.fan_in) * static_cast<std::size_t>(v.fan_out);
        off = v.b_off + static_cast<std::size_t>(v.fan_out);
        views.push_back(v);
    }
    return views;
}

// out = W x + b for one layer
inline void affine(const double* values, const LayerView& v,
                   const double* x, double* out) {
    for (int o = 0; o < v.fan_out; ++o) {
        const double* w = values + v.w_off + static_cast<std::size_t>(o) * static_cast<std::size_t>(v.fan_in);
        double acc = values[v.b_off + static_cast<std::size_t>(o)];
        for (int i = 0; i < v.fan_in; ++i) acc += w[i] * x[i];
        out[o] = acc;
    }
}

// softmax with max subtraction; returns probabilities into p
inline void softmax(const double* logits, int n, double* p) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (int i = 0; i < n; ++i) p[i] /= sum;
}

}  // namespace detail

/// Deterministic initialization: weights uniform in [-a, a] with
/// a = sqrt(6 / (fan_in + fan_out)) per layer, biases exactly zero.
inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
    validate(spec);
    ModelParams params{spec, std::vector<double>(param_count(spec), 0.0)};
    Rng rng(derive_seed(seed, 0x1A17u));
    for (const auto& v : detail::layer_views(spec)) {
        double a = std::sqrt(6.0 / static_cast<double>(v.fan_in + v.fan_out));
        std::size_t n_w = static_cast<std::size_t>(v.fan_in) * static_cast<std::size_t>(v.fan_out);
        for (std::size_t i = 0; i < n_w; ++i)
            params.values[v.w_off + i] = rng.uniform(-a, a);
        // biases stay zero
    }
    return params;
}

/// Mean cross-entropy of softmax(logits) against the true labels.
/// Restricting to `subset` (sample indices) evaluates a mini-batch.
inline double forward_loss(const ModelParams& params, const DatasetShard& shard,
                           std::span<const int> subset = {}) {
    detail::check_compat(params, shard);
    auto views = detail::layer_views(params.spec);
    int width = params.spec.input_dim;
    for (const auto& v : views) width = std::max(width, v.fan_out);
    std::vector<double> buf_a(static_cast<std::size_t>(width));
    std::vector<double> buf_b(static_cast<std::size_t>(width));
    std::vector<double> probs(static_cast<std::size_t>(params.spec.num_classes));

    int n = subset.empty() ? shard.size() : static_cast<int>(subset.size());
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        int si = subset.empty() ? s : subset[static_cast<std::size_t>(s)];
        auto x = shard.row(si);
        std::copy(x.begin(), x.end(), buf_a.begin());
        const double* in = buf_a.data();
        double* out = buf_b.data();
        for (std::size_t l = 0; l < views.size(); ++l) {
            detail::affine(params.values.data(), views[l], in, out);
            if (l + 1 < views.size())
                for (int i = 0; i < views[l].fan_out; ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
            std::swap(buf_a, buf_b);  // filled buffer becomes the next input
            in = buf_a.data();
            out = buf_b.data();
        }
        detail::softmax(in, params.spec.num_classes, probs.data());
        double p = probs[static_cast<std::size_t>(shard.labels[static_cast<std::size_t>(si)])];
        total += -std::log(std::max(p, 1e-300));
    }
    return total / static_cast<double>(n);
}

/// Analytic gradient of forward_loss, mean-reduced over the (sub)batch.
inline std::vector<double> gradient(const ModelParams& params, const DatasetShard& shard,
                                    std::span<const int> subset = {}) {
    detail::check_compat(params, shard);
    auto views = detail::layer_views(params.spec);
    std::size_t n_layers = views.size();
    int n = subset.empty() ? shard.size() : static_cast<int>(subset.size());

    std::vector<double> grad(params.values.size(), 0.0);
    // per-layer activations (post-nonlinearity) and pre-activations
    std::vector<std::vector<double>> act(n_layers + 1);
    std::vector<std::vector<double>> pre(n_layers);
    act[0].resize(static_cast<std::size_t>(params.spec.input_dim));
    for (std::size_t l = 0; l < n_layers; ++l) {
        pre[l].resize(static_cast<std::size_t>(views[l].fan_out));
        act[l + 1].resize(static_cast<std::size_t>(views[l].fan_out));
    }
    std::vector<double> delta, delta_prev;

    double inv_n = 1.0 / static_cast<double>(n);
    for (int s = 0; s < n; ++s) {
        int si = subset.empty() ? s : subset[static_cast<std::size_t>(s)];
        auto x = shard.row(si);
        std::copy(x.begin(), x.end(), act[0].begin());
        for (std::size_t l = 0; l < n_layers; ++l) {
            detail::affine(params.values.data(), views[l], act[l].data(), pre[l].data());
            if (l + 1 < n_layers) {
                for (int i = 0; i < views[l].fan_out; ++i)
                    act[l + 1][static_cast<std::size_t>(i)] =
                        pre[l][static_cast<std::size_t>(i)] > 0.0 ? pre[l][static_cast<std::size_t>(i)] : 0.0;
            } else {
                std::copy(pre[l].begin(), pre[l].end(), act[l + 1].begin());
            }
        }

        // output delta: (softmax - onehot) / n
        int C = params.spec.num_classes;
        delta.resize(static_cast<std::size_t>(C));
        detail::softmax(pre[n_layers - 1].data(), C, delta.data());
        delta[static_cast<std::size_t>(shard.labels[static_cast<std::size_t>(si)])] -= 1.0;
        for (double& d : delta) d *= inv_n;

        for (std::size_t l = n_layers; l-- > 0;) {
            const auto& v = views[l];
            const double* a_in = act[l].data();
            for (int o = 0; o < v.fan_out; ++o) {
                double d = delta[static_cast<std::size_t>(o)];
                double* gw = grad.data() + v.w_off + static_cast<std::size_t>(o) * static_cast<std::size_t>(v.fan_in);
                for (int i = 0; i < v.fan_in; ++i) gw[i] += d * a_in[i];
                grad[v.b_off + static_cast<std::size_t>(o)] += d;
            }
            if (l > 0) {
                delta_prev.assign(static_cast<std::size_t>(v.fan_in), 0.0);
                for (int o = 0; o < v.fan_out; ++o) {
                    double d = delta[static_cast<std::size_t>(o)];
                    const double* w = params.values.data() + v.w_off +
                                      static_cast<std::size_t>(o) * static_cast<std::size_t>(v.fan_in);
                    for (int i = 0; i < v.fan_in; ++i)
                        delta_prev[static_cast<std::size_t>(i)] += d * w[i];
                }
                // relu mask of the previous layer
                for (int i = 0; i < v.fan_in; ++i)
                    if (!(pre[l - 1][static_cast<std::size_t>(i)] > 0.0))
                        delta_prev[static_cast<std::size_t>(i)] = 0.0;
                delta.swap(delta_prev);
            }
        }
    }
    return grad;
}

/// Central differences of an arbitrary scalar function of a flat vector.
template <typename F>
std::vector<double> finite_difference(F&& f, std::vector<double> x, double step) {
    if (!(step > 0.0)) throw value_error("finite difference step must be > 0");
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = x[i];
        x[i] = orig + step;
        double up = f(x);
        x[i] = orig - step;
        double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// Finite-difference gradient of forward_loss; the verification oracle for
/// the analytic path.
inline std::vector<double> finite_diff_gradient(const ModelParams& params,
                                                const DatasetShard& shard, double step) {
    ModelParams scratch = params;
    return finite_difference(
        [&](const std::vector<double>& v) {
            scratch.values = v;
            return forward_loss(scratch, shard);
        },
        params.values, step);
}

/// values' = values - eta * direction; spec unchanged.
inline ModelParams sgd_step(const ModelParams& params, std::span<const double> direction,
                            double eta) {
    if (direction.size() != params.values.size())
        throw dimension_error("direction length does not match parameter count");
    ModelParams out = params;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] -= eta * direction[i];
    return out;
}

inline void sgd_step_inplace(ModelParams& params, std::span<const double> direction,
                             double eta) {
    if (direction.size() != params.values.size())
        throw dimension_error("direction length does not match parameter count");
    for (std::size_t i = 0; i < params.values.size(); ++i)
        params.values[i] -= eta * direction[i];
}

/// Fraction of samples whose argmax logit matches the label.
/// Ties pick the lowest class index.
inline double accuracy(const ModelParams& params, const DatasetShard& shard) {
    detail::check_compat(params, shard);
    auto views = detail::layer_views(params.spec);
    int width = params.spec.input_dim;
    for (const auto& v : views) width = std::max(width, v.fan_out);
    std::vector<double> buf_a(static_cast<std::size_t>(width));
    std::vector<double> buf_b(static_cast<std::size_t>(width));

    int correct = 0;
    for (int s = 0; s < shard.size(); ++s) {
        auto x = shard.row(s);
        std::copy(x.begin(), x.end(), buf_a.begin());
        const double* in = buf_a.data();
        double* out = buf_b.data();
        for (std::size_t l = 0; l < views.size(); ++l) {
            detail::affine(params.values.data(), views[l], in, out);
            if (l + 1 < views.size())
                for (int i = 0; i < views[l].fan_out; ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
            std::swap(buf_a, buf_b);
            in = buf_a.data();
            out = buf_b.data();
        }
        int best = 0;
        for (int c = 1; c < params.spec.num_classes; ++c)
            if (in[c] > in[best]) best = c;
        if (best == shard.labels[static_cast<std::size_t>(s)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(shard.size());
}

}  // namespace stocfl
