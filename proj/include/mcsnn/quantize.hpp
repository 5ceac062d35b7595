#ifndef MCSNN_QUANTIZE_HPP
#define MCSNN_QUANTIZE_HPP

// Post-training conversion of a QMCLeaky network to integers, the integer
// reference forward pass, and the bit-width sweep.

#include <cstdint>
#include <span>
#include <vector>

#include "mcsnn/encoding.hpp"
#include "mcsnn/error.hpp"
#include "mcsnn/fixed_point.hpp"
#include "mcsnn/network.hpp"

namespace mcsnn {

struct QuantConfig {
    /// Weight width; 0 uses each layer's own quant_bits (8 for plain dense).
    int weight_bits = 0;
    FixedPointFormat state = FixedPointFormat::state();
    FixedPointFormat threshold = FixedPointFormat::threshold();
};

/// One dense layer and the QMCLeaky population it drives.
struct QuantizedLayer {
    QTensor weights; // in x out
    QTensor bias;    // 1 x out, state format
    std::vector<std::int64_t> threshold_raw;
    std::size_t in() const { return weights.rows; }
    std::size_t out() const { return weights.cols; }
    bool operator==(const QuantizedLayer&) const = default;
};

struct QuantizedModel {
    std::size_t input_dim = 0;
    std::size_t t_steps = 0;
    FixedPointFormat state = FixedPointFormat::state();
    FixedPointFormat threshold = FixedPointFormat::threshold();
    std::vector<QuantizedLayer> layers;
    bool operator==(const QuantizedModel&) const = default;
};

/// Requires dense/qdense layers each followed by a qmcleaky activation;
/// dropout layers are dropped (identity at inference).
inline QuantizedModel quantize_network(const TrainedModel& model, const QuantConfig& cfg = {}) {
    cfg.state.validate();
    cfg.threshold.validate();
    require(!cfg.threshold.is_signed, "threshold format must be unsigned");
    const auto& spec = model.spec;
    QuantizedModel q;
    q.input_dim = spec.input_dim;
    q.t_steps = spec.t_steps;
    q.state = cfg.state;
    q.threshold = cfg.threshold;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& l = spec.layers[li];
        if (l.kind == LayerKind::dropout) continue;
        require(is_dense(l.kind), "quantization supports dense layers followed by qmcleaky activations only");
        require(li + 1 < spec.layers.size() && spec.layers[li + 1].kind == LayerKind::activation &&
                    spec.layers[li + 1].neuron.kind == NeuronKind::qmcleaky,
                "quantization supports dense layers followed by qmcleaky activations only");
        const int bits = cfg.weight_bits > 0 ? cfg.weight_bits : (l.kind == LayerKind::qdense ? l.quant_bits : 8);
        const auto& w = model.param(li, "weight").value;
        const auto& b = model.param(li, "bias").value;
        const auto& th = model.param(li + 1, "threshold").value;
        std::span<const double> wv(w.data(), static_cast<std::size_t>(w.size()));
        QuantizedLayer ql;
        ql.weights = QTensor::from_real(wv, static_cast<std::size_t>(w.rows()), static_cast<std::size_t>(w.cols()),
                                        fit_format(wv, bits));
        ql.bias = QTensor::from_real({b.data(), static_cast<std::size_t>(b.size())}, 1,
                                     static_cast<std::size_t>(b.size()), cfg.state);
        for (Eigen::Index i = 0; i < th.size(); ++i) {
            const auto raw = quantize_raw(th.data()[i], cfg.threshold);
            ql.threshold_raw.push_back(std::max<std::int64_t>(raw, 1));
        }
        q.layers.push_back(std::move(ql));
        ++li; // the activation
    }
    require(!q.layers.empty() && q.layers.back().out() == 2, "quantized network must end in 2 output neurons");
    return q;
}

/// Every layer's spikes at every step: spikes[layer][t][neuron].
struct QuantTrace {
    std::vector<std::vector<std::vector<std::uint8_t>>> spikes;
    std::array<std::size_t, 2> counts{0, 0};
    int prediction() const { return counts[1] > counts[0] ? 1 : 0; }
};

/// Integer-only forward pass of a single encoded window (batch 1).
inline QuantTrace reference_forward(const QuantizedModel& q, const SpikeTensor& x) {
    require(x.batch() == 1, "reference forward runs one window at a time");
    require(x.features() == q.input_dim, "input width does not match the quantized network");
    QuantTrace tr;
    tr.spikes.resize(q.layers.size());
    std::vector<std::vector<QMCLeakyState>> states;
    for (const auto& l : q.layers) states.emplace_back(l.out());
    for (std::size_t t = 0; t < x.t_steps(); ++t) {
        auto step = x.step(t);
        std::vector<std::uint8_t> in(step.begin(), step.end());
        for (std::size_t li = 0; li < q.layers.size(); ++li) {
            const auto& l = q.layers[li];
            const auto current = qdense_forward(in, l.weights, l.bias, q.state);
            std::vector<std::uint8_t> out(l.out());
            for (std::size_t j = 0; j < l.out(); ++j) {
                const QMCLeakyParams p{l.threshold_raw[j], q.threshold};
                auto [ns, spk] = qmcleaky_step(states[li][j], p, current.raw[j], q.state);
                states[li][j] = ns;
                out[j] = spk ? 1 : 0;
            }
            tr.spikes[li].push_back(out);
            in = std::move(out);
        }
    }
    for (const auto& s : tr.spikes.back()) {
        tr.counts[0] += s[0];
        tr.counts[1] += s[1];
    }
    return tr;
}

/// Accuracy of the integer network, window i encoded with derive_seed(seed, {i})
/// exactly as evaluate() does.
inline double quantized_accuracy(const QuantizedModel& q, const WindowedDataset& ds,
                                 std::uint64_t seed = kDefaultEvalSeed) {
    require(!ds.empty(), "cannot evaluate on an empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto x = rate_encode(ds.window(i), q.t_steps, derive_seed(seed, {i}));
        correct += reference_forward(q, x).prediction() == ds.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct SweepRow {
    int width = 0;
    std::size_t epoch = 0;
    double test_accuracy = 0.0;
    bool operator==(const SweepRow&) const = default;
};

/// Sets every qdense layer of `spec` to `bits`.
inline NetworkSpec with_quant_bits(NetworkSpec spec, int bits) {
    for (auto& l : spec.layers)
        if (l.kind == LayerKind::qdense) l.quant_bits = bits;
    return spec;
}

/// Trains one quantization-aware model per width and records the test
/// accuracy after every epoch; rows are ordered by width then epoch.
inline std::vector<SweepRow> bitwidth_sweep(const NetworkSpec& spec, const SplitDataset& data,
                                            std::span<const int> widths, TrainConfig cfg) {
    require(!widths.empty(), "bit-width sweep needs at least one width");
    bool has_qdense = false;
    for (const auto& l : spec.layers) has_qdense = has_qdense || l.kind == LayerKind::qdense;
    require(has_qdense, "bit-width sweep needs at least one qdense layer");
    cfg.quantization_aware = true;
    cfg.eval_each_epoch = true;
    std::vector<SweepRow> rows;
    for (int w : widths) {
        const auto s = with_quant_bits(spec, w);
        validate(s);
        bptt_train(s, data, cfg, [&](const EpochRecord& r) { rows.push_back({w, r.epoch, r.test_acc}); });
    }
    return rows;
}

} // namespace mcsnn

#endif
