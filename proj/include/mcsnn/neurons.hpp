#ifndef MCSNN_NEURONS_HPP
#define MCSNN_NEURONS_HPP

// Scalar reference dynamics for the spiking neurons. Every step applies a
// soft reset by subtraction driven by the previous step's spike, then fires
// when the (soma) potential reaches the threshold.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "mcsnn/error.hpp"

namespace mcsnn {

enum class NeuronKind { lif, clif, mcleaky, qmcleaky };

inline std::string_view to_string(NeuronKind k) {
    switch (k) {
    case NeuronKind::lif: return "lif";
    case NeuronKind::clif: return "clif";
    case NeuronKind::mcleaky: return "mcleaky";
    case NeuronKind::qmcleaky: return "qmcleaky";
    }
    return "lif";
}

inline NeuronKind parse_neuron_kind(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (auto k : {NeuronKind::lif, NeuronKind::clif, NeuronKind::mcleaky, NeuronKind::qmcleaky})
        if (to_string(k) == lower) return k;
    throw ValidationError("unknown neuron kind '" + std::string(s) + "'");
}

/// Threshold value that disables spiking.
inline constexpr double kNoSpike = std::numeric_limits<double>::infinity();

/// Fixed decay used by the quantized multi-compartment neuron (x - x/8).
inline constexpr double kQuantizedDecay = 0.875;

/// Learned thresholds are kept inside the grammar's range.
inline constexpr double kMinThreshold = 0.1;
inline constexpr double kMaxThreshold = 10.0;

inline constexpr int kDefaultSurrogateSlope = 25;

struct LifParams {
    double beta = 0.875;
    double threshold = 1.0;
    bool learnable_threshold = true;
};

struct LifState {
    double v = 0.0;
    bool last_spike = false;
};

struct ClifParams {
    double alpha_syn = 0.5;
    double beta = 0.875;
    double threshold = 1.0;
};

struct ClifState {
    double i_syn = 0.0;
    double v = 0.0;
    bool last_spike = false;
};

struct MCLeakyParams {
    double alpha_d1 = 0.875;
    double alpha_d2 = 0.875;
    double alpha_s = 0.875;
    double beta_d1 = 0.875;
    double beta_d2 = 0.875;
    double threshold = 1.0;
    bool learnable_decays = true;
    bool learnable_threshold = true;
};

struct MCLeakyState {
    double v_d1 = 0.0;
    double v_d2 = 0.0;
    double v_soma = 0.0;
    bool last_spike = false;
};

template <class State>
struct StepResult {
    State state;
    bool spike = false;
};

namespace detail {

inline void require_finite(double x) {
    if (!std::isfinite(x)) throw ValidationError("neuron input is not finite");
}

// last_spike * threshold without 0 * inf = NaN for the no-spike sentinel.
inline double reset_term(bool last_spike, double threshold) { return last_spike ? threshold : 0.0; }

} // namespace detail

inline StepResult<LifState> lif_step(const LifState& s, const LifParams& p, double input) {
    detail::require_finite(input);
    detail::require_finite(s.v);
    LifState next;
    next.v = p.beta * s.v + input - detail::reset_term(s.last_spike, p.threshold);
    next.last_spike = next.v >= p.threshold;
    return {next, next.last_spike};
}

inline StepResult<ClifState> clif_step(const ClifState& s, const ClifParams& p, double input) {
    detail::require_finite(input);
    ClifState next;
    next.i_syn = p.alpha_syn * s.i_syn + input;
    next.v = p.beta * s.v + next.i_syn - detail::reset_term(s.last_spike, p.threshold);
    next.last_spike = next.v >= p.threshold;
    return {next, next.last_spike};
}

/// Two dendrites and a soma, updated top to bottom: dendrite 2 from the
/// previous potentials, dendrite 1 from the fresh dendrite 2, soma from the
/// fresh dendrite 1.
inline StepResult<MCLeakyState> mcleaky_step(const MCLeakyState& s, const MCLeakyParams& p, double input) {
    detail::require_finite(input);
    MCLeakyState next;
    next.v_d2 = p.alpha_d2 * s.v_d2 + p.alpha_d1 * s.v_d1 + input;
    next.v_d1 = p.alpha_d1 * s.v_d1 + p.beta_d2 * next.v_d2 + p.alpha_s * s.v_soma;
    next.v_soma = p.alpha_s * s.v_soma + p.beta_d1 * next.v_d1 - detail::reset_term(s.last_spike, p.threshold);
    next.last_spike = next.v_soma >= p.threshold;
    return {next, next.last_spike};
}

/// d(spike)/dv as used in the backward pass: 1 / (1 + slope*|v - threshold|)^2.
inline double fast_sigmoid_surrogate(double v_minus_theta, int slope) {
    require(slope >= 1, "surrogate slope must be at least 1");
    const double d = 1.0 + static_cast<double>(slope) * std::abs(v_minus_theta);
    return 1.0 / (d * d);
}

/// Primitive of the surrogate, x / (1 + slope*|x|); its derivative is
/// fast_sigmoid_surrogate. Used as the smooth spike in gradient checks.
inline double fast_sigmoid(double x, int slope) {
    return x / (1.0 + static_cast<double>(slope) * std::abs(x));
}

inline double clamp_decay(double d) { return std::clamp(d, 0.0, 1.0); }
inline double clamp_threshold(double t) { return std::clamp(t, kMinThreshold, kMaxThreshold); }

} // namespace mcsnn

#endif
