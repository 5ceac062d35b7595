#ifndef MCSNN_SLSTM_HPP
#define MCSNN_SLSTM_HPP

// Spiking LSTM cell and its reduced variants, evaluated for one sample.
//
//   full: gate = act(W_i* x + b_i* + W_h* mem + b_h*)
//   v1:   gate = act(b_i* + W_h* mem + b_h*)        (input path removed)
//   v2:   gate = act(W_h* mem)                      (v1 without biases)
//   v3:   gate = act(b_h*)                          (biases only)
//   dm:   full cell fed by the decaying trace x_t = alpha x_{t-1} + I_t
//
// i, f, o use the logistic sigmoid and g uses tanh. The hidden state is
// thresholded into spikes and reset by subtraction in the same step.

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "mcsnn/error.hpp"
#include "mcsnn/neurons.hpp"

namespace mcsnn {

enum class SlstmVariant { full, v1, v2, v3, dm };

inline std::string_view to_string(SlstmVariant v) {
    switch (v) {
    case SlstmVariant::full: return "full";
    case SlstmVariant::v1: return "v1";
    case SlstmVariant::v2: return "v2";
    case SlstmVariant::v3: return "v3";
    case SlstmVariant::dm: return "dm";
    }
    return "full";
}

inline SlstmVariant parse_slstm_variant(std::string_view s) {
    for (auto v : {SlstmVariant::full, SlstmVariant::v1, SlstmVariant::v2, SlstmVariant::v3, SlstmVariant::dm})
        if (to_string(v) == s) return v;
    throw ValidationError("unknown SLSTM variant '" + std::string(s) + "'");
}

/// Which parameter groups a variant keeps.
struct SlstmUses {
    bool input_weights;
    bool input_bias;
    bool hidden_weights;
    bool hidden_bias;
};

inline constexpr SlstmUses slstm_uses(SlstmVariant v) {
    switch (v) {
    case SlstmVariant::full:
    case SlstmVariant::dm: return {true, true, true, true};
    case SlstmVariant::v1: return {false, true, true, true};
    case SlstmVariant::v2: return {false, false, true, false};
    case SlstmVariant::v3: return {false, false, false, true};
    }
    return {true, true, true, true};
}

/// Trainable parameters of one layer: retained matrices and biases, one
/// shared threshold, and the input decay for dm.
inline std::size_t slstm_parameter_count(SlstmVariant v, std::size_t input_dim, std::size_t hidden_dim) {
    const auto u = slstm_uses(v);
    std::size_t n = 1;
    if (u.input_weights) n += 4 * input_dim * hidden_dim;
    if (u.input_bias) n += 4 * hidden_dim;
    if (u.hidden_weights) n += 4 * hidden_dim * hidden_dim;
    if (u.hidden_bias) n += 4 * hidden_dim;
    if (v == SlstmVariant::dm) n += 1;
    return n;
}

struct GateWeights {
    Eigen::MatrixXd input;   // hidden x input
    Eigen::MatrixXd hidden;  // hidden x hidden
    Eigen::VectorXd input_bias;
    Eigen::VectorXd hidden_bias;
};

struct SlstmParams {
    GateWeights i, f, o, g;
    double threshold = 1.0;
    SlstmVariant variant = SlstmVariant::full;
    double input_decay_alpha = 0.0;

    static SlstmParams zeros(std::size_t input_dim, std::size_t hidden_dim, SlstmVariant variant) {
        SlstmParams p;
        p.variant = variant;
        for (auto* gw : {&p.i, &p.f, &p.o, &p.g}) {
            gw->input = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hidden_dim), static_cast<Eigen::Index>(input_dim));
            gw->hidden = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hidden_dim), static_cast<Eigen::Index>(hidden_dim));
            gw->input_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden_dim));
            gw->hidden_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden_dim));
        }
        return p;
    }

    Eigen::Index input_dim() const { return i.input.cols(); }
    Eigen::Index hidden_dim() const { return i.hidden.rows(); }
};

struct SlstmState {
    Eigen::VectorXd mem;
    Eigen::VectorXd cell;
    Eigen::VectorXd input_trace;
    Eigen::VectorXd last_spike;

    static SlstmState zeros(Eigen::Index input_dim, Eigen::Index hidden_dim) {
        return {Eigen::VectorXd::Zero(hidden_dim), Eigen::VectorXd::Zero(hidden_dim),
                Eigen::VectorXd::Zero(input_dim), Eigen::VectorXd::Zero(hidden_dim)};
    }
};

struct Gates {
    Eigen::VectorXd i, f, o, g;
};

namespace detail {

inline Eigen::VectorXd logistic(const Eigen::VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

inline Eigen::VectorXd gate_preactivation(const GateWeights& w, SlstmUses u, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& mem) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(w.hidden.rows());
    if (u.input_weights) z += w.input * x;
    if (u.input_bias) z += w.input_bias;
    if (u.hidden_weights) z += w.hidden * mem;
    if (u.hidden_bias) z += w.hidden_bias;
    return z;
}

inline void check_shapes(const SlstmState& s, const SlstmParams& p, const Eigen::VectorXd& x) {
    require(x.size() == p.input_dim(), "SLSTM input width mismatch");
    require(s.mem.size() == p.hidden_dim() && s.cell.size() == p.hidden_dim(), "SLSTM state width mismatch");
}

} // namespace detail

/// Gate activations of any variant, x being the (possibly decayed) input.
inline Gates slstm_gates(SlstmVariant variant, const SlstmState& s, const SlstmParams& p, const Eigen::VectorXd& x) {
    const auto u = slstm_uses(variant);
    return {detail::logistic(detail::gate_preactivation(p.i, u, x, s.mem)),
            detail::logistic(detail::gate_preactivation(p.f, u, x, s.mem)),
            detail::logistic(detail::gate_preactivation(p.o, u, x, s.mem)),
            detail::gate_preactivation(p.g, u, x, s.mem).array().tanh().matrix()};
}

/// Gates of the reduced variants only.
inline Gates slstm_variant_gates(SlstmVariant variant, const SlstmState& s, const SlstmParams& p,
                                 const Eigen::VectorXd& x) {
    require(variant == SlstmVariant::v1 || variant == SlstmVariant::v2 || variant == SlstmVariant::v3,
            "slstm_variant_gates expects v1, v2 or v3");
    return slstm_gates(variant, s, p, x);
}

struct SlstmStepResult {
    SlstmState state;
    Eigen::VectorXd spikes;
};

namespace detail {

inline SlstmStepResult slstm_cell(const SlstmState& s, const SlstmParams& p, SlstmVariant variant,
                                  const Eigen::VectorXd& x) {
    const auto gates = slstm_gates(variant, s, p, x);
    SlstmState n = s;
    n.cell = gates.f.cwiseProduct(s.cell) + gates.i.cwiseProduct(gates.g);
    n.mem = gates.o.cwiseProduct(n.cell.array().tanh().matrix());
    Eigen::VectorXd spikes = (n.mem.array() >= p.threshold).cast<double>().matrix();
    if (std::isfinite(p.threshold)) n.mem -= spikes * p.threshold;
    n.last_spike = spikes;
    return {std::move(n), std::move(spikes)};
}

} // namespace detail

inline SlstmStepResult slstm_step(const SlstmState& s, const SlstmParams& p, const Eigen::VectorXd& x) {
    detail::check_shapes(s, p, x);
    const auto variant = p.variant == SlstmVariant::dm ? SlstmVariant::full : p.variant;
    return detail::slstm_cell(s, p, variant, x);
}

/// Decays the input trace, then runs the full cell on it.
inline SlstmStepResult dm_slstm_step(const SlstmState& s, const SlstmParams& p, const Eigen::VectorXd& x) {
    require(p.variant == SlstmVariant::dm, "dm_slstm_step needs the dm variant");
    detail::check_shapes(s, p, x);
    require(s.input_trace.size() == x.size(), "SLSTM input trace width mismatch");
    SlstmState with_trace = s;
    with_trace.input_trace = p.input_decay_alpha * s.input_trace + x;
    auto r = detail::slstm_cell(with_trace, p, SlstmVariant::full, with_trace.input_trace);
    return r;
}

} // namespace mcsnn

#endif
