#ifndef MCSNN_NETWORK_HPP
#define MCSNN_NETWORK_HPP

// Feed-forward spiking networks unrolled over time on an autodiff tape:
// parameter layout and initialization, the forward pass with spike
// accounting, both losses, BPTT training with Adam and evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcsnn/autodiff.hpp"
#include "mcsnn/encoding.hpp"
#include "mcsnn/energy.hpp"
#include "mcsnn/error.hpp"
#include "mcsnn/fixed_point.hpp"
#include "mcsnn/network_spec.hpp"
#include "mcsnn/random.hpp"
#include "mcsnn/signal.hpp"

namespace mcsnn {

using ad::Matrix;

// ---------------------------------------------------------------------------
// Parameter layout

enum class Init { zeros, uniform, constant };

struct ParamSlot {
    std::string name;
    std::size_t rows = 1;
    std::size_t cols = 1;
    Init init = Init::zeros;
    /// Half-width of the uniform init or the constant value.
    double value = 0.0;
    ad::Constraint constraint = ad::Constraint::none;
    bool trainable = true;
};

/// Parameters of one layer in storage order. Dense weights are in x out so
/// that a batch row times the weights gives the layer current.
inline std::vector<ParamSlot> layer_slots(const LayerSpec& l, std::size_t in) {
    std::vector<ParamSlot> s;
    const auto& n = l.neuron;
    auto decay = [&](std::string name, std::size_t width, double v) {
        s.push_back({std::move(name), 1, width, Init::constant, v, ad::Constraint::decay, n.learn_decay});
    };
    auto threshold = [&](std::size_t width) {
        s.push_back({"threshold", 1, width, Init::constant, n.threshold, ad::Constraint::threshold, n.learn_threshold});
    };
    switch (l.kind) {
    case LayerKind::dense:
    case LayerKind::qdense: {
        const double r = 1.0 / std::sqrt(static_cast<double>(in));
        s.push_back({"weight", in, l.units, Init::uniform, r});
        s.push_back({"bias", 1, l.units, Init::uniform, r});
        break;
    }
    case LayerKind::activation:
        switch (n.kind) {
        case NeuronKind::lif:
            decay("beta", in, n.beta);
            threshold(in);
            break;
        case NeuronKind::clif:
            decay("alpha_syn", in, n.alpha_syn);
            decay("beta", in, n.beta);
            threshold(in);
            break;
        case NeuronKind::mcleaky:
            decay("alpha_d1", in, n.alpha);
            decay("alpha_d2", in, n.alpha);
            decay("alpha_s", in, n.alpha);
            decay("beta_d1", in, n.beta);
            decay("beta_d2", in, n.beta);
            threshold(in);
            break;
        case NeuronKind::qmcleaky: threshold(in); break;
        }
        break;
    case LayerKind::dropout: break;
    case LayerKind::slstm: {
        const auto u = slstm_uses(l.variant);
        const double r = 1.0 / std::sqrt(static_cast<double>(l.units));
        for (const char* g : {"i", "f", "o", "g"}) {
            const std::string gate(g);
            if (u.input_weights) s.push_back({"w_in_" + gate, in, l.units, Init::uniform, r});
            if (u.input_bias) s.push_back({"b_in_" + gate, 1, l.units, Init::uniform, r});
            if (u.hidden_weights) s.push_back({"w_hid_" + gate, l.units, l.units, Init::uniform, r});
            if (u.hidden_bias) s.push_back({"b_hid_" + gate, 1, l.units, Init::uniform, r});
        }
        threshold(1);
        if (l.variant == SlstmVariant::dm) decay("input_decay", 1, l.input_decay);
        break;
    }
    }
    return s;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    bool operator==(const EpochRecord&) const = default;
};

struct TrainedModel {
    NetworkSpec spec;
    std::vector<ad::Parameter> params;
    /// First parameter of each layer; layer i owns [offsets[i], offsets[i+1]).
    std::vector<std::size_t> offsets;
    std::vector<EpochRecord> history;
    std::vector<LayerSpikeStats> spike_stats;

    /// Total stored scalars.
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    ad::Parameter& param(std::size_t layer, std::string_view name) {
        for (auto i = offsets[layer]; i < offsets[layer + 1]; ++i)
            if (params[i].name == name) return params[i];
        throw ValidationError("layer " + std::to_string(layer) + " has no parameter '" + std::string(name) + "'");
    }
    const ad::Parameter& param(std::size_t layer, std::string_view name) const {
        return const_cast<TrainedModel*>(this)->param(layer, name);
    }
    bool has_param(std::size_t layer, std::string_view name) const {
        for (auto i = offsets[layer]; i < offsets[layer + 1]; ++i)
            if (params[i].name == name) return true;
        return false;
    }

    std::vector<double> flat() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto& p : params) out.insert(out.end(), p.value.data(), p.value.data() + p.value.size());
        return out;
    }

    void set_flat(std::span<const double> values) {
        require(values.size() == parameter_count(), "flat parameter block has the wrong size");
        std::size_t k = 0;
        for (auto& p : params)
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = values[k++];
    }
};

/// Builds every parameter of `spec`; uniform inits draw from one stream
/// seeded by `seed`.
inline TrainedModel init_model(const NetworkSpec& spec, std::uint64_t seed) {
    validate(spec);
    TrainedModel m;
    m.spec = spec;
    Rng rng(derive_seed(seed, {0x1417}));
    const auto widths = layer_widths(spec);
    std::size_t in = spec.input_dim;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        m.offsets.push_back(m.params.size());
        for (auto& slot : layer_slots(spec.layers[li], in)) {
            ad::Parameter p;
            p.name = slot.name;
            p.constraint = slot.constraint;
            p.trainable = slot.trainable;
            p.value.resize(static_cast<Eigen::Index>(slot.rows), static_cast<Eigen::Index>(slot.cols));
            for (Eigen::Index i = 0; i < p.value.size(); ++i) {
                double v = 0.0;
                if (slot.init == Init::uniform) v = uniform(rng, -slot.value, slot.value);
                if (slot.init == Init::constant) v = slot.value;
                p.value.data()[i] = v;
            }
            p.zero_grad();
            m.params.push_back(std::move(p));
        }
        in = widths[li];
    }
    m.offsets.push_back(m.params.size());
    return m;
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardOptions {
    bool train = false;
    /// Fake-quantize qdense weights/biases and qmcleaky thresholds.
    bool quantize = true;
    /// Smooth spike forward for finite-difference checks.
    bool smooth = false;
    std::uint64_t dropout_seed = 0;
};

struct TapeForward {
    /// Output of the last layer at every step (batch x 2).
    std::vector<ad::Var> outputs;
    Matrix counts;
    std::vector<LayerSpikeStats> stats;
    /// Sum over time and batch of each layer's output.
    std::vector<double> layer_output_totals;
};

inline Matrix step_matrix(const SpikeTensor& x, std::size_t t) {
    const auto slab = x.step(t);
    Matrix m(static_cast<Eigen::Index>(x.batch()), static_cast<Eigen::Index>(x.features()));
    for (std::size_t i = 0; i < slab.size(); ++i) m.data()[i] = slab[i];
    return m;
}

inline const FixedPointFormat& qmcleaky_threshold_format() {
    static const FixedPointFormat f = FixedPointFormat::threshold();
    return f;
}

namespace detail {

struct LayerRun {
    const LayerSpec* spec = nullptr;
    std::size_t index = 0;
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<std::pair<std::string, ad::Var>> vars;
    std::vector<ad::Var> state;
    std::optional<ad::Var> last_spike;

    ad::Var var(std::string_view name) const {
        for (const auto& [n, v] : vars)
            if (n == name) return v;
        throw ValidationError("missing parameter '" + std::string(name) + "'");
    }
    bool has(std::string_view name) const {
        for (const auto& [n, v] : vars)
            if (n == name) return true;
        return false;
    }
};

inline ad::Var reset_by_subtraction(ad::Tape& t, ad::Var v, const std::optional<ad::Var>& last, ad::Var theta) {
    if (!last) return v;
    return ad::sub(t, v, ad::scale_cols(t, *last, theta));
}

inline ad::Var activation_step(ad::Tape& t, LayerRun& L, ad::Var current, bool first, ad::SpikeOptions so) {
    const auto kind = L.spec->neuron.kind;
    const ad::Var theta = L.var("threshold");
    auto decayed = [&](std::size_t slot, std::string_view coeff) {
        return ad::scale_cols(t, L.state[slot], L.var(coeff));
    };
    ad::Var soma;
    switch (kind) {
    case NeuronKind::lif:
        if (first) L.state = {current};
        else L.state[0] = ad::add(t, decayed(0, "beta"), current);
        soma = L.state[0] = reset_by_subtraction(t, L.state[0], L.last_spike, theta);
        break;
    case NeuronKind::clif:
        if (first) {
            L.state = {current, current};
        } else {
            L.state[0] = ad::add(t, decayed(0, "alpha_syn"), current);
            L.state[1] = ad::add(t, decayed(1, "beta"), L.state[0]);
        }
        soma = L.state[1] = reset_by_subtraction(t, L.state[1], L.last_spike, theta);
        break;
    case NeuronKind::mcleaky: {
        // state: d2, d1, soma
        if (first) {
            const ad::Var d2 = current;
            const ad::Var d1 = ad::scale_cols(t, d2, L.var("beta_d2"));
            const ad::Var s = ad::scale_cols(t, d1, L.var("beta_d1"));
            L.state = {d2, d1, s};
        } else {
            const ad::Var d2 = ad::add(t, ad::add(t, decayed(0, "alpha_d2"), decayed(1, "alpha_d1")), current);
            const ad::Var d1 = ad::add(t, ad::add(t, decayed(1, "alpha_d1"), ad::scale_cols(t, d2, L.var("beta_d2"))),
                                       decayed(2, "alpha_s"));
            const ad::Var s = ad::add(t, decayed(2, "alpha_s"), ad::scale_cols(t, d1, L.var("beta_d1")));
            L.state = {d2, d1, s};
        }
        soma = L.state[2] = reset_by_subtraction(t, L.state[2], L.last_spike, theta);
        break;
    }
    case NeuronKind::qmcleaky: {
        const double a = kQuantizedDecay;
        if (first) {
            const ad::Var d2 = current;
            const ad::Var d1 = ad::scale(t, d2, a);
            L.state = {d2, d1, ad::scale(t, d1, a)};
        } else {
            const ad::Var d2 = ad::add(t, ad::scale(t, ad::add(t, L.state[0], L.state[1]), a), current);
            const ad::Var d1 = ad::scale(t, ad::add(t, ad::add(t, L.state[1], d2), L.state[2]), a);
            const ad::Var s = ad::scale(t, ad::add(t, L.state[2], d1), a);
            L.state = {d2, d1, s};
        }
        soma = L.state[2] = reset_by_subtraction(t, L.state[2], L.last_spike, theta);
        break;
    }
    }
    const ad::Var spk = ad::spike(t, soma, theta, so);
    L.last_spike = spk;
    return spk;
}

inline ad::Var slstm_gate(ad::Tape& t, const LayerRun& L, const std::string& g, ad::Var x, ad::Var mem,
                          Eigen::Index batch) {
    std::optional<ad::Var> z;
    auto acc = [&](ad::Var term) { z = z ? ad::add(t, *z, term) : term; };
    if (L.has("w_in_" + g)) acc(ad::matmul(t, x, L.var("w_in_" + g)));
    if (L.has("w_hid_" + g)) acc(ad::matmul(t, mem, L.var("w_hid_" + g)));
    for (const auto& b : {"b_in_" + g, "b_hid_" + g}) {
        if (!L.has(b)) continue;
        if (!z) z = t.constant(Matrix::Zero(batch, static_cast<Eigen::Index>(L.out)));
        z = ad::add_row(t, *z, L.var(b));
    }
    return *z;
}

inline ad::Var slstm_step(ad::Tape& t, LayerRun& L, ad::Var x, ad::SpikeOptions so) {
    const Eigen::Index batch = t.value(x).rows();
    if (L.state.empty()) {
        const ad::Var zero_h = t.constant(Matrix::Zero(batch, static_cast<Eigen::Index>(L.out)));
        const ad::Var zero_x = t.constant(Matrix::Zero(batch, static_cast<Eigen::Index>(L.in)));
        L.state = {zero_h, zero_h, zero_x}; // mem, cell, input trace
    }
    ad::Var in = x;
    if (L.spec->variant == SlstmVariant::dm) {
        in = ad::add(t, ad::scale_cols(t, L.state[2], L.var("input_decay")), x);
        L.state[2] = in;
    }
    const ad::Var mem = L.state[0];
    const ad::Var i = ad::sigmoid(t, slstm_gate(t, L, "i", in, mem, batch));
    const ad::Var f = ad::sigmoid(t, slstm_gate(t, L, "f", in, mem, batch));
    const ad::Var o = ad::sigmoid(t, slstm_gate(t, L, "o", in, mem, batch));
    const ad::Var g = ad::tanh(t, slstm_gate(t, L, "g", in, mem, batch));
    const ad::Var cell = ad::add(t, ad::mul(t, f, L.state[1]), ad::mul(t, i, g));
    const ad::Var h = ad::mul(t, o, ad::tanh(t, cell));
    const ad::Var theta = L.var("threshold");
    const ad::Var spk = ad::spike(t, h, theta, so);
    L.state[0] = ad::sub(t, h, ad::scale_cols(t, spk, theta));
    L.state[1] = cell;
    return spk;
}

} // namespace detail

/// Unrolls the network over all steps of `x` on `tape`.
inline TapeForward forward_on_tape(ad::Tape& tape, TrainedModel& model, const SpikeTensor& x,
                                   const ForwardOptions& opt = {}) {
    const auto& spec = model.spec;
    require(x.features() == spec.input_dim, "input width " + std::to_string(x.features()) +
                                                " does not match the network input " +
                                                std::to_string(spec.input_dim));
    const auto widths = layer_widths(spec);
    const auto batch = x.batch();

    std::vector<detail::LayerRun> runs(spec.layers.size());
    std::size_t in = spec.input_dim;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        auto& L = runs[li];
        const auto& ls = spec.layers[li];
        L.spec = &ls;
        L.index = li;
        L.in = in;
        L.out = widths[li];
        for (auto pi = model.offsets[li]; pi < model.offsets[li + 1]; ++pi) {
            auto& p = model.params[pi];
            ad::Var v = tape.parameter(p);
            if (opt.quantize && ls.kind == LayerKind::qdense) v = ad::fake_quant_fit(tape, v, ls.quant_bits);
            if (opt.quantize && ls.kind == LayerKind::activation && ls.neuron.kind == NeuronKind::qmcleaky &&
                p.name == "threshold")
                v = ad::fake_quant(tape, v, qmcleaky_threshold_format());
            L.vars.emplace_back(p.name, v);
        }
        in = widths[li];
    }

    TapeForward out;
    out.layer_output_totals.assign(spec.layers.size(), 0.0);
    std::vector<double> dense_input_totals(spec.layers.size(), 0.0);
    Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(batch), 2);

    for (std::size_t t = 0; t < x.t_steps(); ++t) {
        ad::Var h = tape.constant(step_matrix(x, t));
        for (std::size_t li = 0; li < runs.size(); ++li) {
            auto& L = runs[li];
            const auto& ls = *L.spec;
            ad::SpikeOptions so{ls.neuron.slope, opt.smooth};
            switch (ls.kind) {
            case LayerKind::dense:
            case LayerKind::qdense:
                dense_input_totals[li] += tape.value(h).sum();
                h = ad::add_row(tape, ad::matmul(tape, h, L.var("weight")), L.var("bias"));
                break;
            case LayerKind::activation: h = detail::activation_step(tape, L, h, t == 0, so); break;
            case LayerKind::dropout:
                if (opt.train && ls.dropout > 0.0) {
                    Rng rng(derive_seed(opt.dropout_seed, {li, t}));
                    const auto& hv = tape.value(h);
                    Matrix mask(hv.rows(), hv.cols());
                    for (Eigen::Index i = 0; i < mask.size(); ++i)
                        mask.data()[i] = uniform01(rng) < ls.dropout ? 0.0 : 1.0;
                    h = ad::mul(tape, h, tape.constant(std::move(mask)));
                }
                break;
            case LayerKind::slstm: h = detail::slstm_step(tape, L, h, so); break;
            }
            out.layer_output_totals[li] += tape.value(h).sum();
        }
        counts += tape.value(h);
        out.outputs.push_back(h);
    }
    out.counts = std::move(counts);

    in = spec.input_dim;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        if (is_dense(spec.layers[li].kind)) {
            LayerSpikeStats s;
            s.layer_index = li;
            s.n_input_neurons = in;
            s.n_output_neurons = widths[li];
            s.input_spikes_total = dense_input_totals[li];
            s.n_synapses = in * widths[li];
            s.presentations = batch;
            out.stats.push_back(s);
        }
        in = widths[li];
    }
    return out;
}

struct ForwardResult {
    /// Output spikes per class, one row per batch item.
    std::vector<std::array<double, 2>> counts;
    std::vector<LayerSpikeStats> stats;
    std::vector<double> layer_output_totals;
};

/// Inference-mode forward pass.
inline ForwardResult forward(const TrainedModel& model, const SpikeTensor& x, bool quantize = true) {
    ad::Tape tape(false);
    auto& m = const_cast<TrainedModel&>(model); // a non-recording tape never writes gradients
    ForwardOptions opt;
    opt.quantize = quantize;
    auto f = forward_on_tape(tape, m, x, opt);
    ForwardResult r;
    for (Eigen::Index b = 0; b < f.counts.rows(); ++b) r.counts.push_back({f.counts(b, 0), f.counts(b, 1)});
    r.stats = std::move(f.stats);
    r.layer_output_totals = std::move(f.layer_output_totals);
    return r;
}

// ---------------------------------------------------------------------------
// Losses

inline void require_label(int label) { require(label == 0 || label == 1, "label must be 0 or 1"); }

/// Mean over both classes of (count - target)^2 with targets 0.8 T for the
/// true class and 0.2 T for the other.
inline double count_mse_loss(std::array<double, 2> counts, int label, std::size_t t_steps) {
    require_label(label);
    require(counts[0] >= 0.0 && counts[1] >= 0.0, "spike counts must be non-negative");
    double loss = 0.0;
    for (int c = 0; c < 2; ++c) {
        const double target = (c == label ? 0.8 : 0.2) * static_cast<double>(t_steps);
        loss += (counts[static_cast<std::size_t>(c)] - target) * (counts[static_cast<std::size_t>(c)] - target);
    }
    return loss / 2.0;
}

/// Softmax cross entropy of the per-step class activations, averaged over
/// steps.
inline double ce_rate_loss(std::span<const std::array<double, 2>> activations, int label) {
    require_label(label);
    require(!activations.empty(), "ce_rate_loss needs at least one step");
    double total = 0.0;
    for (const auto& a : activations) {
        const double m = std::max(a[0], a[1]);
        const double lse = m + std::log(std::exp(a[0] - m) + std::exp(a[1] - m));
        total += lse - a[static_cast<std::size_t>(label)];
    }
    return total / static_cast<double>(activations.size());
}

/// Batch-mean loss node for a forward trace.
inline ad::Var loss_on_tape(ad::Tape& t, const TapeForward& f, std::span<const int> labels, LossKind kind,
                            std::size_t t_steps) {
    for (int l : labels) require_label(l);
    const double batch = static_cast<double>(labels.size());
    if (kind == LossKind::count_mse) {
        ad::Var counts = f.outputs.front();
        for (std::size_t i = 1; i < f.outputs.size(); ++i) counts = ad::add(t, counts, f.outputs[i]);
        Matrix target(static_cast<Eigen::Index>(labels.size()), 2);
        for (std::size_t b = 0; b < labels.size(); ++b)
            for (int c = 0; c < 2; ++c)
                target(static_cast<Eigen::Index>(b), c) = (c == labels[b] ? 0.8 : 0.2) * static_cast<double>(t_steps);
        const ad::Var diff = ad::sub(t, counts, t.constant(std::move(target)));
        return ad::scale(t, ad::sum_all(t, ad::mul(t, diff, diff)), 1.0 / (2.0 * batch));
    }
    std::vector<int> lab(labels.begin(), labels.end());
    std::optional<ad::Var> total;
    for (auto out : f.outputs) {
        const ad::Var ce = ad::softmax_ce(t, out, lab);
        total = total ? ad::add(t, *total, ce) : ce;
    }
    return ad::scale(t, *total, 1.0 / (batch * static_cast<double>(f.outputs.size())));
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

inline constexpr std::uint64_t kDefaultEvalSeed = 0xE7A1;

/// argmax with ties going to class 0.
inline int predict_from_counts(std::array<double, 2> counts) { return counts[1] > counts[0] ? 1 : 0; }

inline int predict(const TrainedModel& model, std::span<const double> window, std::uint64_t seed = kDefaultEvalSeed) {
    const auto x = rate_encode(window, model.spec.t_steps, seed);
    return predict_from_counts(forward(model, x).counts.front());
}

struct EvalResult {
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::vector<LayerSpikeStats> spike_stats;
};

/// Window i is encoded with derive_seed(seed, {i}); batches only affect speed.
inline EvalResult evaluate(const TrainedModel& model, const WindowedDataset& ds, std::uint64_t seed = kDefaultEvalSeed,
                           std::size_t batch = 64) {
    require(!ds.empty(), "cannot evaluate on an empty dataset");
    EvalResult r;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        const auto end = std::min(ds.size(), start + batch);
        std::vector<std::span<const double>> windows;
        std::vector<std::uint64_t> seeds;
        for (auto i = start; i < end; ++i) {
            windows.push_back(ds.window(i));
            seeds.push_back(derive_seed(seed, {i}));
        }
        const auto x = rate_encode_batch(windows, model.spec.t_steps, seeds);
        auto f = forward(model, x);
        for (std::size_t b = 0; b < f.counts.size(); ++b) {
            const int p = predict_from_counts(f.counts[b]);
            r.predictions.push_back(p);
            correct += p == ds.labels[start + b] ? 1 : 0;
        }
        if (r.spike_stats.empty()) {
            r.spike_stats = f.stats;
        } else {
            for (std::size_t l = 0; l < f.stats.size(); ++l) {
                r.spike_stats[l].input_spikes_total += f.stats[l].input_spikes_total;
                r.spike_stats[l].presentations += f.stats[l].presentations;
            }
        }
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    return r;
}

// ---------------------------------------------------------------------------
// Training

inline double cosine_anneal(double lr_max, double lr_min, std::size_t epoch, std::size_t period) {
    require(period >= 1, "cosine period must be at least 1");
    const double phase = static_cast<double>(epoch % period) / static_cast<double>(period);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

enum class LrSchedule { constant, cosine };

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 24;
    AdamConfig adam;
    LrSchedule schedule = LrSchedule::constant;
    double lr_min = 0.0;
    /// Cosine period in epochs; 0 means the number of epochs.
    std::size_t lr_period = 0;
    std::uint64_t seed = 0;
    bool quantization_aware = true;
    /// Stop after this many optimizer steps (testing hook).
    std::optional<std::size_t> max_steps;
    /// Evaluate on the test split after every epoch.
    bool eval_each_epoch = true;

    void validate() const {
        require(epochs >= 1, "epochs must be at least 1");
        require(batch_size >= 1, "batch size must be at least 1");
        require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
                "Adam betas must lie in [0,1)");
        require(adam.eps > 0.0, "Adam epsilon must be positive");
        require(lr_min >= 0.0, "minimum learning rate must be non-negative");
    }
};

class Adam {
public:
    explicit Adam(const std::vector<ad::Parameter>& params, AdamConfig cfg) : cfg_(cfg) {
        for (const auto& p : params) {
            m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
            v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        }
    }

    void step(std::vector<ad::Parameter>& params, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p.trainable) continue;
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
            p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
            p.project();
        }
    }

private:
    AdamConfig cfg_;
    std::vector<Matrix> m_, v_;
    std::size_t t_ = 0;
};

inline double scheduled_lr(const NetworkSpec& spec, const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.schedule == LrSchedule::constant) return spec.learning_rate;
    return cosine_anneal(spec.learning_rate, cfg.lr_min, epoch, cfg.lr_period == 0 ? cfg.epochs : cfg.lr_period);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` in place for cfg.epochs more epochs.
inline void train_model(TrainedModel& model, const SplitDataset& data, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
    cfg.validate();
    const auto& train = data.train;
    require(!train.empty(), "training set is empty");
    require(train.window_len == model.spec.input_dim, "dataset window length does not match the network input");
    Adam adam(model.params, cfg.adam);
    std::size_t steps = 0;
    const std::size_t first_epoch = model.history.size();
    for (std::size_t e = first_epoch; e < first_epoch + cfg.epochs; ++e) {
        const double lr = scheduled_lr(model.spec, cfg, e);
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, {1, e}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t batches = 0, correct = 0, seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            if (cfg.max_steps && steps >= *cfg.max_steps) break;
            const auto end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::span<const double>> windows;
            std::vector<std::uint64_t> seeds;
            std::vector<int> labels;
            for (auto k = start; k < end; ++k) {
                windows.push_back(train.window(order[k]));
                seeds.push_back(derive_seed(cfg.seed, {2, e, order[k]}));
                labels.push_back(train.labels[order[k]]);
            }
            const auto x = rate_encode_batch(windows, model.spec.t_steps, seeds);
            ad::Tape tape;
            ForwardOptions opt;
            opt.train = true;
            opt.quantize = cfg.quantization_aware;
            opt.dropout_seed = derive_seed(cfg.seed, {3, e, start});
            const auto f = forward_on_tape(tape, model, x, opt);
            const ad::Var loss = loss_on_tape(tape, f, labels, model.spec.loss, model.spec.t_steps);
            const double lv = tape.value(loss)(0, 0);
            if (!std::isfinite(lv)) throw DivergenceError(static_cast<int>(e));
            for (auto& p : model.params) p.zero_grad();
            tape.backward(loss);
            for (const auto& p : model.params)
                if (!p.grad.allFinite()) throw DivergenceError(static_cast<int>(e));
            adam.step(model.params, lr);
            ++steps;
            loss_sum += lv;
            ++batches;
            for (std::size_t b = 0; b < labels.size(); ++b) {
                const int p = predict_from_counts({f.counts(static_cast<Eigen::Index>(b), 0),
                                                   f.counts(static_cast<Eigen::Index>(b), 1)});
                correct += p == labels[b] ? 1 : 0;
            }
            seen += labels.size();
        }
        if (batches == 0) break;
        EpochRecord rec;
        rec.epoch = e;
        rec.lr = lr;
        rec.loss = loss_sum / static_cast<double>(batches);
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        if (cfg.eval_each_epoch && !data.test.empty()) {
            auto ev = evaluate(model, data.test);
            rec.test_acc = ev.accuracy;
            model.spike_stats = std::move(ev.spike_stats);
        }
        model.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    if (!cfg.eval_each_epoch && !data.test.empty()) {
        auto ev = evaluate(model, data.test);
        if (!model.history.empty()) model.history.back().test_acc = ev.accuracy;
        model.spike_stats = std::move(ev.spike_stats);
    }
}

inline TrainedModel bptt_train(const NetworkSpec& spec, const SplitDataset& data, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {}) {
    require(!data.train.empty(), "training set is empty");
    auto model = init_model(spec, cfg.seed);
    train_model(model, data, cfg, on_epoch);
    return model;
}

struct LosoResult {
    std::vector<double> per_subject;
    double mean = 0.0;
};

/// Leave-one-subject-out: fold s trains on every other subject and tests on s.
inline LosoResult loso_evaluate(const NetworkSpec& spec, std::span<const WindowedDataset> subjects,
                                const TrainConfig& cfg) {
    require(subjects.size() >= 2, "leave-one-subject-out needs at least two subjects");
    LosoResult r;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        SplitDataset fold;
        fold.test = subjects[s];
        fold.train = subjects[s].empty_like();
        for (std::size_t o = 0; o < subjects.size(); ++o) {
            if (o == s) continue;
            require(subjects[o].window_len == subjects[s].window_len, "subjects differ in window length");
            fold.train.values.insert(fold.train.values.end(), subjects[o].values.begin(), subjects[o].values.end());
            fold.train.labels.insert(fold.train.labels.end(), subjects[o].labels.begin(), subjects[o].labels.end());
        }
        auto fold_cfg = cfg;
        fold_cfg.eval_each_epoch = false;
        const auto model = bptt_train(spec, fold, fold_cfg);
        r.per_subject.push_back(evaluate(model, fold.test).accuracy);
    }
    r.mean = std::accumulate(r.per_subject.begin(), r.per_subject.end(), 0.0) /
             static_cast<double>(r.per_subject.size());
    return r;
}

} // namespace mcsnn

#endif
