#ifndef MCSNN_FIXED_POINT_HPP
#define MCSNN_FIXED_POINT_HPP

// Fixed-point primitives shared by the quantized network and its reference
// forward pass: round-half-to-even quantization, saturating arithmetic, the
// shift-subtract 0.875 decay and the quantized neuron update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mcsnn/error.hpp"

namespace mcsnn {

struct FixedPointFormat {
    int total_bits = 16;
    int frac_bits = 8;
    bool is_signed = true;

    static constexpr FixedPointFormat weights() { return {8, 7, true}; }
    static constexpr FixedPointFormat state() { return {16, 8, true}; }
    static constexpr FixedPointFormat threshold() { return {8, 4, false}; }

    void validate() const {
        require(total_bits >= 2 && total_bits <= 32, "fixed-point width must lie in [2,32]");
        require(frac_bits >= 0 && frac_bits < total_bits, "fractional bits must lie in [0, total_bits)");
    }

    std::int64_t min_raw() const { return is_signed ? -(std::int64_t{1} << (total_bits - 1)) : 0; }
    std::int64_t max_raw() const {
        return is_signed ? (std::int64_t{1} << (total_bits - 1)) - 1 : (std::int64_t{1} << total_bits) - 1;
    }
    double scale() const { return std::ldexp(1.0, frac_bits); }
    double ulp() const { return std::ldexp(1.0, -frac_bits); }
    double min_value() const { return static_cast<double>(min_raw()) * ulp(); }
    double max_value() const { return static_cast<double>(max_raw()) * ulp(); }

    bool operator==(const FixedPointFormat&) const = default;
};

inline std::int64_t saturate(std::int64_t v, const FixedPointFormat& f) {
    return std::clamp(v, f.min_raw(), f.max_raw());
}

/// round-half-to-even of x * 2^frac, saturated to the format. NaN maps to 0.
inline std::int64_t quantize_raw(double x, const FixedPointFormat& f) {
    if (std::isnan(x)) return 0;
    const double scaled = x * f.scale();
    if (scaled >= static_cast<double>(f.max_raw())) return f.max_raw();
    if (scaled <= static_cast<double>(f.min_raw())) return f.min_raw();
    // nearbyint honours the default FE_TONEAREST mode, i.e. ties to even.
    return saturate(static_cast<std::int64_t>(std::nearbyint(scaled)), f);
}

inline double dequantize_raw(std::int64_t raw, const FixedPointFormat& f) {
    return static_cast<double>(raw) * f.ulp();
}

/// Nearest representable value (the fake-quantization used during training).
inline double fake_quantize(double x, const FixedPointFormat& f) { return dequantize_raw(quantize_raw(x, f), f); }

struct QValue {
    std::int64_t raw = 0;
    FixedPointFormat format;

    double real() const { return dequantize_raw(raw, format); }
    bool operator==(const QValue&) const = default;
};

inline QValue quantize(double x, const FixedPointFormat& f) { return {quantize_raw(x, f), f}; }

/// Row-major integer tensor sharing one format.
struct QTensor {
    std::vector<std::int64_t> raw;
    FixedPointFormat format;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::int64_t at(std::size_t r, std::size_t c) const { return raw[r * cols + c]; }

    static QTensor from_real(std::span<const double> values, std::size_t rows, std::size_t cols,
                             const FixedPointFormat& f) {
        require(values.size() == rows * cols, "QTensor shape does not match value count");
        QTensor t{{}, f, rows, cols};
        t.raw.reserve(values.size());
        for (double v : values) t.raw.push_back(quantize_raw(v, f));
        return t;
    }

    std::vector<double> to_real() const {
        std::vector<double> out;
        out.reserve(raw.size());
        for (auto r : raw) out.push_back(dequantize_raw(r, format));
        return out;
    }

    void validate() const {
        format.validate();
        require(raw.size() == rows * cols, "QTensor raw size does not match its shape");
        for (auto r : raw) require(r >= format.min_raw() && r <= format.max_raw(), "QTensor value out of range");
    }

    bool operator==(const QTensor&) const = default;
};

/// Picks the largest fractional width (at most total_bits-1) that still
/// represents max|x| without saturating.
inline FixedPointFormat fit_format(std::span<const double> values, int total_bits) {
    double max_abs = 0.0;
    for (double v : values) max_abs = std::max(max_abs, std::abs(v));
    int frac = total_bits - 1;
    if (max_abs > 0.0) {
        const int int_bits = static_cast<int>(std::ceil(std::log2(max_abs)));
        frac = std::clamp(total_bits - 1 - int_bits, 0, total_bits - 1);
    }
    FixedPointFormat f{total_bits, frac, true};
    f.validate();
    return f;
}

/// Arithmetic realignment by `shift` fractional bits: left when positive,
/// floor division by 2^-shift when negative.
inline std::int64_t align(std::int64_t v, int shift) {
    return shift >= 0 ? v * (std::int64_t{1} << shift) : v >> (-shift);
}

/// v * 0.875 as v - (v >> 3). The shift floors, so small positive values
/// (|v| < 8) never decay and negative values decay slightly faster.
inline std::int64_t decay_approx(std::int64_t v) { return v - (v >> 3); }

inline QValue decay_approx(const QValue& v) { return {decay_approx(v.raw), v.format}; }

/// Binary-input dense layer: adds the weight rows selected by the spikes in a
/// wide accumulator, realigns to the output format, adds the bias and
/// saturates once.
inline QTensor qdense_forward(std::span<const std::uint8_t> spikes, const QTensor& weights, const QTensor& bias,
                              const FixedPointFormat& out_format) {
    require(spikes.size() == weights.rows, "qdense input width does not match weight rows");
    require(bias.raw.size() == weights.cols, "qdense bias width does not match weight columns");
    require(bias.format == out_format, "qdense bias must be stored in the output format");
    std::vector<std::int64_t> acc(weights.cols, 0);
    for (std::size_t i = 0; i < spikes.size(); ++i) {
        if (!spikes[i]) continue;
        const auto* row = weights.raw.data() + i * weights.cols;
        for (std::size_t j = 0; j < weights.cols; ++j) acc[j] += row[j];
    }
    QTensor out{{}, out_format, 1, weights.cols};
    out.raw.resize(weights.cols);
    const int shift = out_format.frac_bits - weights.format.frac_bits;
    for (std::size_t j = 0; j < weights.cols; ++j)
        out.raw[j] = saturate(align(acc[j], shift) + bias.raw[j], out_format);
    return out;
}

struct QMCLeakyParams {
    std::int64_t threshold_raw = 16;
    FixedPointFormat threshold_format = FixedPointFormat::threshold();

    double threshold() const { return dequantize_raw(threshold_raw, threshold_format); }

    /// Threshold expressed in the state format.
    std::int64_t threshold_in(const FixedPointFormat& state) const {
        return saturate(align(threshold_raw, state.frac_bits - threshold_format.frac_bits), state);
    }
};

struct QMCLeakyState {
    std::int64_t v_d1 = 0;
    std::int64_t v_d2 = 0;
    std::int64_t v_soma = 0;
    bool last_spike = false;
    bool operator==(const QMCLeakyState&) const = default;
};

/// Integer multi-compartment update with every decay replaced by
/// decay_approx; each line sums in a wide register and saturates once.
inline std::pair<QMCLeakyState, bool> qmcleaky_step(const QMCLeakyState& s, const QMCLeakyParams& p,
                                                    std::int64_t input, const FixedPointFormat& state) {
    const std::int64_t theta = p.threshold_in(state);
    QMCLeakyState n;
    n.v_d2 = saturate(decay_approx(s.v_d2) + decay_approx(s.v_d1) + input, state);
    n.v_d1 = saturate(decay_approx(s.v_d1) + decay_approx(n.v_d2) + decay_approx(s.v_soma), state);
    n.v_soma = saturate(decay_approx(s.v_soma) + decay_approx(n.v_d1) - (s.last_spike ? theta : 0), state);
    n.last_spike = n.v_soma >= theta;
    return {n, n.last_spike};
}

/// Single-compartment counterpart used for LIF benchmarking neurons.
inline std::pair<std::int64_t, bool> qlif_step(std::int64_t v, bool last_spike, const QMCLeakyParams& p,
                                               std::int64_t input, const FixedPointFormat& state) {
    const std::int64_t theta = p.threshold_in(state);
    const auto next = saturate(decay_approx(v) + input - (last_spike ? theta : 0), state);
    return {next, next >= theta};
}

} // namespace mcsnn

#endif
