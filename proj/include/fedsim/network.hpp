#pragma once

#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class Activation { kRelu, kIdentity };

struct DenseLayer {
    Tensor weights;  // in_dim x out_dim, row-major
    Tensor bias;     // out_dim
    Activation activation = Activation::kRelu;

    std::size_t in_dim() const { return weights.dim(0); }
    std::size_t out_dim() const { return weights.dim(1); }
};

/// Feedforward classifier. The first L-1 layers form the feature extractor,
/// the last layer the decision head; the last activation is always identity
/// so the network outputs logits.
struct Network {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const { return layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.back().out_dim(); }

    // Extractor output width. A 1-layer network has an empty extractor, so
    // the embedding space is the input itself.
    std::size_t feature_dim() const {
        return layers.size() >= 2 ? layers[layers.size() - 2].out_dim() : input_dim();
    }

    bool same_architecture(const Network& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].in_dim() != other.layers[l].in_dim() ||
                layers[l].out_dim() != other.layers[l].out_dim() ||
                layers[l].activation != other.layers[l].activation)
                return false;
        }
        return true;
    }
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

inline bool bitwise_equal(const Network& a, const Network& b) {
    if (!a.same_architecture(b)) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (!bitwise_equal(a.layers[l].weights, b.layers[l].weights)) return false;
        if (!bitwise_equal(a.layers[l].bias, b.layers[l].bias)) return false;
    }
    return true;
}

/// Glorot-uniform init from a counter-based stream keyed by the seed; biases
/// start at zero. Bit-identical for equal (dims, seed).
inline Network init_network(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
    if (layer_dims.size() < 2)
        throw ArchitectureError("network needs at least input and output dims");
    for (std::size_t d : layer_dims)
        if (d == 0) throw ArchitectureError("layer dims must be positive");

    RngStream rng{derive_key(seed, purpose::kInit)};
    Network net;
    const std::size_t n_layers = layer_dims.size() - 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t in = layer_dims[l];
        const std::size_t out = layer_dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        DenseLayer layer;
        layer.weights = Tensor::zeros({in, out});
        for (double& w : layer.weights.data)
            w = -bound + 2.0 * bound * rng.next_double_open();
        layer.bias = Tensor::zeros({out});
        layer.activation = (l + 1 == n_layers) ? Activation::kIdentity : Activation::kRelu;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

/// Cached intermediates of one forward pass, consumed by backward().
struct ForwardTrace {
    std::vector<std::size_t> input_shape;  // original batch shape
    Tensor input;                          // flattened to B x d_in
    std::vector<Tensor> pre;               // per-layer pre-activation
    std::vector<Tensor> post;              // per-layer post-activation

    std::size_t batch() const { return input.dim(0); }
};

/// Per-layer parameter gradients plus the gradient w.r.t. the input batch.
struct GradientBundle {
    std::vector<Tensor> dweights;
    std::vector<Tensor> dbias;
    Tensor input_gradient;

    void add_scaled(const GradientBundle& other, double s) {
        if (dweights.size() != other.dweights.size())
            throw ShapeError("gradient bundles differ in layer count");
        for (std::size_t l = 0; l < dweights.size(); ++l) {
            require_same_shape(dweights[l], other.dweights[l], "bundle weights");
            for (std::size_t i = 0; i < dweights[l].data.size(); ++i)
                dweights[l].data[i] += s * other.dweights[l].data[i];
            for (std::size_t i = 0; i < dbias[l].data.size(); ++i)
                dbias[l].data[i] += s * other.dbias[l].data[i];
        }
        require_same_shape(input_gradient, other.input_gradient, "bundle input gradient");
        for (std::size_t i = 0; i < input_gradient.data.size(); ++i)
            input_gradient.data[i] += s * other.input_gradient.data[i];
    }

    void add(const GradientBundle& other) { add_scaled(other, 1.0); }

    void scale(double s) {
        for (auto& t : dweights)
            for (double& v : t.data) v *= s;
        for (auto& t : dbias)
            for (double& v : t.data) v *= s;
        for (double& v : input_gradient.data) v *= s;
    }
};

inline GradientBundle zero_bundle(const Network& net, const std::vector<std::size_t>& batch_shape) {
    GradientBundle g;
    for (const auto& layer : net.layers) {
        g.dweights.push_back(Tensor::zeros(layer.weights.shape));
        g.dbias.push_back(Tensor::zeros(layer.bias.shape));
    }
    g.input_gradient = Tensor::zeros(batch_shape);
    return g;
}

namespace detail {

inline Tensor flatten_batch(const Network& net, const Tensor& batch) {
    const std::size_t b = batch_rows(batch);
    const std::size_t d = batch_cols(batch);
    if (d != net.input_dim())
        throw ShapeError("batch feature dim " + std::to_string(d) +
                         " does not match network input dim " +
                         std::to_string(net.input_dim()));
    Tensor flat({b, d}, batch.data);
    return flat;
}

inline void apply_activation(Tensor& t, Activation act) {
    if (act == Activation::kRelu)
        for (double& v : t.data)
            if (v < 0.0) v = 0.0;
}

}  // namespace detail

/// Full forward pass: logits plus the trace backward() needs.
inline std::pair<Tensor, ForwardTrace> forward(const Network& net, const Tensor& batch) {
    ForwardTrace trace;
    trace.input_shape = batch.shape;
    trace.input = detail::flatten_batch(net, batch);
    const std::size_t b = trace.input.dim(0);

    const Tensor* cur = &trace.input;
    for (const auto& layer : net.layers) {
        if (cur->cols() != layer.in_dim())
            throw ShapeError("layer input dim mismatch");
        Tensor pre = Tensor::zeros({b, layer.out_dim()});
        for (std::size_t r = 0; r < b; ++r)
            std::memcpy(pre.data.data() + r * layer.out_dim(), layer.bias.data.data(),
                        layer.out_dim() * sizeof(double));
        matmul_nn(cur->data.data(), b, layer.in_dim(), layer.weights.data.data(),
                  layer.out_dim(), pre.data.data());
        Tensor post = pre;
        detail::apply_activation(post, layer.activation);
        trace.pre.push_back(std::move(pre));
        trace.post.push_back(std::move(post));
        cur = &trace.post.back();
    }
    return {trace.post.back(), std::move(trace)};
}

/// Output of the feature extractor only (post-activation of the penultimate
/// layer; the input itself for a 1-layer network).
inline Tensor embed(const Network& net, const Tensor& batch) {
    Tensor flat = detail::flatten_batch(net, batch);
    if (net.layers.size() == 1) return flat;
    const std::size_t b = flat.dim(0);
    Tensor cur = std::move(flat);
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        Tensor next = Tensor::zeros({b, layer.out_dim()});
        for (std::size_t r = 0; r < b; ++r)
            std::memcpy(next.data.data() + r * layer.out_dim(), layer.bias.data.data(),
                        layer.out_dim() * sizeof(double));
        matmul_nn(cur.data.data(), b, layer.in_dim(), layer.weights.data.data(),
                  layer.out_dim(), next.data.data());
        detail::apply_activation(next, layer.activation);
        cur = std::move(next);
    }
    return cur;
}

/// Mean cross-entropy over the batch with max-subtraction stabilization.
/// Returns (loss, dloss/dlogits); dlogits = (softmax - onehot) / B.
inline std::pair<double, Tensor> softmax_cross_entropy(const Tensor& logits,
                                                       const std::vector<int>& labels) {
    const std::size_t b = batch_rows(logits);
    const std::size_t c = batch_cols(logits);
    if (labels.size() != b)
        throw ShapeError("label count does not match batch size");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw LabelError("label " + std::to_string(y) + " outside [0," +
                             std::to_string(c) + ")");

    Tensor dlogits = Tensor::zeros({b, c});
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
        const double* row = logits.data.data() + r * c;
        double m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        double* drow = dlogits.data.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) {
            drow[j] = std::exp(row[j] - m);
            sum += drow[j];
        }
        const std::size_t y = static_cast<std::size_t>(labels[r]);
        loss += -(row[y] - m - std::log(sum));
        const double inv_sum = 1.0 / sum;
        for (std::size_t j = 0; j < c; ++j) drow[j] = drow[j] * inv_sum * inv_b;
        drow[y] -= inv_b;
    }
    return {loss * inv_b, std::move(dlogits)};
}

/// Mean squared l2 distance between feature rows and target rows.
/// Returns (loss, dloss/dfeatures); dfeatures = 2 (features - targets) / B.
inline std::pair<double, Tensor> mse_feature_loss(const Tensor& features, const Tensor& targets) {
    require_same_shape(features, targets, "mse_feature_loss");
    const std::size_t b = batch_rows(features);
    Tensor d = Tensor::zeros(features.shape);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < features.data.size(); ++i) {
        const double diff = features.data[i] - targets.data[i];
        loss += diff * diff;
        d.data[i] = 2.0 * diff * inv_b;
    }
    return {loss * inv_b, std::move(d)};
}

namespace detail {

inline void check_trace(const Network& net, const ForwardTrace& trace) {
    if (trace.pre.size() != net.layers.size() || trace.post.size() != net.layers.size())
        throw TraceError("trace layer count does not match network");
    if (trace.input.cols() != net.input_dim())
        throw TraceError("trace input dim does not match network");
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        if (trace.pre[l].cols() != net.layers[l].out_dim())
            throw TraceError("trace layer " + std::to_string(l) + " width mismatch");
}

// dZ = upstream (x) act'(pre). ReLU derivative is 0 at 0.
inline Tensor activation_backward(const Tensor& upstream, const Tensor& pre, Activation act) {
    Tensor dz = upstream;
    if (act == Activation::kRelu)
        for (std::size_t i = 0; i < dz.data.size(); ++i)
            if (pre.data[i] <= 0.0) dz.data[i] = 0.0;
    return dz;
}

}  // namespace detail

/// Exact reverse-mode gradients for all parameters and the input batch.
/// With from_embedding the upstream gradient enters at the extractor output
/// and the decision head keeps zero gradients.
inline GradientBundle backward(const Network& net, const ForwardTrace& trace,
                               const Tensor& upstream, bool from_embedding = false) {
    detail::check_trace(net, trace);
    const std::size_t n_layers = net.layers.size();
    const std::size_t b = trace.batch();
    GradientBundle g = zero_bundle(net, trace.input_shape);

    std::size_t top;  // one past the highest layer that receives gradient
    if (from_embedding) {
        if (n_layers == 1) {
            if (batch_rows(upstream) != b || batch_cols(upstream) != net.feature_dim())
                throw TraceError("embedding gradient shape mismatch");
            g.input_gradient.data = upstream.data;
            return g;
        }
        top = n_layers - 1;
    } else {
        top = n_layers;
    }
    if (batch_rows(upstream) != b ||
        batch_cols(upstream) != net.layers[top - 1].out_dim())
        throw TraceError("upstream gradient shape mismatch");

    Tensor grad = upstream;  // gradient w.r.t. post-activation of layer top-1
    for (std::size_t l = top; l-- > 0;) {
        const auto& layer = net.layers[l];
        Tensor dz = detail::activation_backward(grad, trace.pre[l], layer.activation);
        const Tensor& in = (l == 0) ? trace.input : trace.post[l - 1];
        matmul_tn_acc(in.data.data(), b, layer.in_dim(), dz.data.data(), layer.out_dim(),
                      g.dweights[l].data.data());
        for (std::size_t r = 0; r < b; ++r) {
            const double* drow = dz.data.data() + r * layer.out_dim();
            for (std::size_t j = 0; j < layer.out_dim(); ++j) g.dbias[l].data[j] += drow[j];
        }
        Tensor next = Tensor::zeros({b, layer.in_dim()});
        matmul_nt(dz.data.data(), b, layer.out_dim(), layer.weights.data.data(),
                  layer.in_dim(), next.data.data());
        grad = std::move(next);
    }
    g.input_gradient.data = std::move(grad.data);  // reshaped to the original batch shape
    return g;
}

/// Input gradient alone, skipping parameter gradient accumulation. Used by
/// the attack loop where only grad-x matters.
inline Tensor backprop_to_input(const Network& net, const ForwardTrace& trace,
                                const Tensor& dlogits) {
    detail::check_trace(net, trace);
    const std::size_t b = trace.batch();
    if (batch_rows(dlogits) != b || batch_cols(dlogits) != net.output_dim())
        throw TraceError("upstream gradient shape mismatch");
    Tensor grad = dlogits;
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const auto& layer = net.layers[l];
        Tensor dz = detail::activation_backward(grad, trace.pre[l], layer.activation);
        Tensor next = Tensor::zeros({b, layer.in_dim()});
        matmul_nt(dz.data.data(), b, layer.out_dim(), layer.weights.data.data(),
                  layer.in_dim(), next.data.data());
        grad = std::move(next);
    }
    Tensor out = Tensor::zeros(trace.input_shape);
    out.data = std::move(grad.data);
    return out;
}

/// One SGD step: theta <- theta - lr * g. Pure function of its inputs;
/// lr = 0 is a legal no-op, negative lr is rejected.
inline Network sgd_step(Network net, const GradientBundle& grads, double lr) {
    if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
    if (grads.dweights.size() != net.layers.size())
        throw ShapeError("gradient bundle layer count does not match network");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        require_same_shape(layer.weights, grads.dweights[l], "sgd_step weights");
        require_same_shape(layer.bias, grads.dbias[l], "sgd_step bias");
        for (std::size_t i = 0; i < layer.weights.data.size(); ++i)
            layer.weights.data[i] -= lr * grads.dweights[l].data[i];
        for (std::size_t i = 0; i < layer.bias.data.size(); ++i)
            layer.bias.data[i] -= lr * grads.dbias[l].data[i];
    }
    return net;
}

}  // namespace fedsim
