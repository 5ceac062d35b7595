#ifndef MCSNN_ENERGY_HPP
#define MCSNN_ENERGY_HPP

// Operation-count energy model. An ANN performs one MAC per synapse per
// inference; an SNN performs one accumulate per synapse reached by a spike.
// With lambda = E_MAC / E_ACC:
//
//   E_SNN / E_ANN = (1/lambda) * N_ACC / N_MAC
//
// and for a dense layer l the spike ratio is the average number of
// presynaptic spikes per presynaptic neuron and presentation.

#include <string>
#include <vector>

#include <json.hpp>

#include "mcsnn/error.hpp"
#include "mcsnn/network_spec.hpp"

namespace mcsnn {

inline constexpr double kDefaultLambda = 5.0;
inline constexpr double kDefaultLatencyRatio = 2.085;

struct LayerSpikeStats {
    std::size_t layer_index = 0;
    std::size_t n_input_neurons = 0;
    std::size_t n_output_neurons = 0;
    /// Presynaptic spikes summed over every time step and presentation.
    double input_spikes_total = 0.0;
    std::size_t n_synapses = 0;
    /// Number of windows the totals were accumulated over.
    std::size_t presentations = 1;

    void validate() const {
        require(input_spikes_total >= 0.0, "spike counts must be non-negative");
        require(n_synapses == n_input_neurons * n_output_neurons, "synapse count inconsistent with layer shape");
        require(presentations >= 1, "spike statistics need at least one presentation");
    }

    bool operator==(const LayerSpikeStats&) const = default;
};

struct EnergyReport {
    std::vector<double> per_layer_spike_ratio;
    double network_spike_ratio = 0.0;
    double lambda = kDefaultLambda;
    double energy_ratio_snn_over_ann = 0.0;
    double efficiency = 0.0;
    double edp_ratio = 0.0;
    double latency_ratio = kDefaultLatencyRatio;
    double acc_ops_per_presentation = 0.0;
    double mac_ops = 0.0;
};

inline double spike_ratio(const LayerSpikeStats& s, std::size_t t_windows) {
    require(s.n_input_neurons > 0, "spike ratio needs at least one presynaptic neuron");
    require(t_windows >= 1, "spike ratio needs at least one presentation");
    return s.input_spikes_total / (static_cast<double>(t_windows) * static_cast<double>(s.n_input_neurons));
}

/// Network ratio from total accumulate operations over total MACs, each layer
/// normalized to one presentation.
inline EnergyReport energy_ratio(const std::vector<LayerSpikeStats>& layers, double lambda = kDefaultLambda) {
    require(!layers.empty(), "energy ratio needs at least one layer");
    require(lambda > 0.0, "lambda must be positive");
    EnergyReport r;
    r.lambda = lambda;
    double acc = 0.0, mac = 0.0;
    for (const auto& l : layers) {
        l.validate();
        const double sr = spike_ratio(l, l.presentations);
        r.per_layer_spike_ratio.push_back(sr);
        acc += sr * static_cast<double>(l.n_synapses);
        mac += static_cast<double>(l.n_synapses);
    }
    require(mac > 0.0, "energy ratio needs at least one synapse");
    r.acc_ops_per_presentation = acc;
    r.mac_ops = mac;
    r.network_spike_ratio = acc / mac;
    r.energy_ratio_snn_over_ann = r.network_spike_ratio / lambda;
    r.efficiency = 1.0 / r.energy_ratio_snn_over_ann;
    r.edp_ratio = r.efficiency * r.latency_ratio;
    return r;
}

/// EDP gain of the SNN over the ANN: efficiency times the ANN/SNN latency ratio.
inline double edp_ratio(double efficiency, double latency_ratio_ann_over_snn) {
    require(latency_ratio_ann_over_snn > 0.0, "latency ratio must be positive");
    return efficiency * latency_ratio_ann_over_snn;
}

inline double edp_ratio(EnergyReport& report, double latency_ratio_ann_over_snn) {
    report.latency_ratio = latency_ratio_ann_over_snn;
    report.edp_ratio = edp_ratio(report.efficiency, latency_ratio_ann_over_snn);
    return report.edp_ratio;
}

/// MACs of the equivalent ANN: one per synapse of every dense layer.
inline std::size_t ann_reference_macs(const NetworkSpec& spec) {
    std::size_t macs = 0, in = spec.input_dim;
    for (const auto& l : spec.layers) {
        require(l.kind != LayerKind::slstm, "ann_reference_macs supports dense networks only");
        if (is_dense(l.kind)) {
            macs += in * l.units;
            in = l.units;
        }
    }
    return macs;
}

inline nlohmann::json to_json(const LayerSpikeStats& s) {
    return {{"layer_index", s.layer_index},         {"n_input_neurons", s.n_input_neurons},
            {"n_output_neurons", s.n_output_neurons}, {"input_spikes_total", s.input_spikes_total},
            {"n_synapses", s.n_synapses},           {"presentations", s.presentations}};
}

inline LayerSpikeStats layer_stats_from_json(const nlohmann::json& j) {
    LayerSpikeStats s;
    s.layer_index = j.at("layer_index").get<std::size_t>();
    s.n_input_neurons = j.at("n_input_neurons").get<std::size_t>();
    s.n_output_neurons = j.at("n_output_neurons").get<std::size_t>();
    s.input_spikes_total = j.at("input_spikes_total").get<double>();
    s.n_synapses = j.value("n_synapses", s.n_input_neurons * s.n_output_neurons);
    s.presentations = j.value("presentations", std::size_t{1});
    return s;
}

inline nlohmann::json to_json(const EnergyReport& r) {
    return {{"per_layer_spike_ratio", r.per_layer_spike_ratio},
            {"network_spike_ratio", r.network_spike_ratio},
            {"lambda", r.lambda},
            {"energy_ratio_snn_over_ann", r.energy_ratio_snn_over_ann},
            {"efficiency", r.efficiency},
            {"edp_ratio", r.edp_ratio},
            {"latency_ratio", r.latency_ratio},
            {"acc_ops_per_presentation", r.acc_ops_per_presentation},
            {"mac_ops", r.mac_ops}};
}

} // namespace mcsnn

#endif
