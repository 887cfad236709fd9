#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/network.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

/// l-infinity attack parameters. epsilon is the ball radius in pixel units,
/// alpha the per-step size, clamp the valid pixel range.
struct AttackConfig {
    double epsilon = 0.3;
    double alpha = 0.01;
    std::size_t steps = 10;
    bool random_start = false;
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;

    void validate() const {
        if (epsilon < 0.0) throw ConfigError("attack epsilon must be non-negative");
        if (!(alpha > 0.0)) throw ConfigError("attack alpha must be positive");
        if (steps < 1) throw ConfigError("attack steps must be at least 1");
        if (!(clamp_lo < clamp_hi)) throw ConfigError("attack clamp range is empty");
    }
};

/// Elementwise clip of x_adv into the epsilon ball around x0, then into the
/// clamp range.
inline Tensor project_linf(const Tensor& x_adv, const Tensor& x0, double epsilon,
                           double clamp_lo, double clamp_hi) {
    require_same_shape(x_adv, x0, "project_linf");
    Tensor out = x_adv;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double lo = x0.data[i] - epsilon;
        const double hi = x0.data[i] + epsilon;
        double v = std::min(std::max(out.data[i], lo), hi);
        out.data[i] = std::min(std::max(v, clamp_lo), clamp_hi);
    }
    return out;
}

namespace detail {

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Tensor input_ce_gradient(const Network& net, const Tensor& batch,
                                const std::vector<int>& labels) {
    auto [logits, trace] = forward(net, batch);
    auto [loss, dlogits] = softmax_cross_entropy(logits, labels);
    (void)loss;
    return backprop_to_input(net, trace, dlogits);
}

}  // namespace detail

/// Fast gradient sign method: x + epsilon * sign(grad_x CE), clamped to the
/// pixel range. sign(0) = 0, so dead-gradient pixels stay untouched.
inline Tensor fgsm(const Network& net, const Tensor& batch, const std::vector<int>& labels,
                   double epsilon, double clamp_lo = 0.0, double clamp_hi = 1.0) {
    if (epsilon < 0.0) throw ConfigError("attack epsilon must be non-negative");
    Tensor grad = detail::input_ce_gradient(net, batch, labels);
    Tensor out = batch;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += epsilon * detail::sign0(grad.data[i]);
        out.data[i] = std::min(std::max(out.data[i], clamp_lo), clamp_hi);
    }
    return out;
}

/// PGD iteration from an explicit start, with the ball centered at x0. The
/// start is projected first, so any feasible warm start works.
inline Tensor pgd_iterate(const Network& net, const Tensor& x0, Tensor x_init,
                          const std::vector<int>& labels, const AttackConfig& cfg) {
    cfg.validate();
    Tensor x = project_linf(x_init, x0, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Tensor grad = detail::input_ce_gradient(net, x, labels);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            x.data[i] += cfg.alpha * detail::sign0(grad.data[i]);
        x = project_linf(x, x0, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    }
    return x;
}

/// Projected gradient descent in the l-infinity ball around the input.
/// White-box and untargeted; only the supplied labels are read. With
/// random_start the iterate begins at x0 + U(-eps, eps) drawn from rng.
inline Tensor pgd(const Network& net, const Tensor& batch, const std::vector<int>& labels,
                  const AttackConfig& cfg, RngStream rng = {}) {
    cfg.validate();
    Tensor x = batch;
    if (cfg.random_start)
        for (double& v : x.data) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    return pgd_iterate(net, batch, std::move(x), labels, cfg);
}

/// Basic iterative method: pgd with random_start forced off.
inline Tensor bim(const Network& net, const Tensor& batch, const std::vector<int>& labels,
                  const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.random_start = false;
    return pgd(net, batch, labels, c);
}

}  // namespace fedsim
