#ifndef MCSNN_PROCESSOR_HPP
#define MCSNN_PROCESSOR_HPP

// Event-driven model of the 256-neuron multi-compartment spike processor.
//
// Memory image (little endian):
//   "MCQI"  u16 version
//   256 x 16-byte neuron records:
//     u8  kind            0 = input/off, 1 = lif, 2 = mcleaky
//     u8  compartments    0, 1 or 3
//     u8  layer           0 for inputs, 1.. for computing layers
//     u8  threshold       raw, unsigned 8-bit
//     i8  threshold_shift state frac bits - threshold frac bits
//     i8  weight_shift    state frac bits - weight frac bits
//     u8  last_spike
//     u8  reserved
//     i16 bias, v_d2, v_d1, v_soma   (16-bit state format)
//   65536 x i8 weights, row = source address, column = target address
//
// An event from address a adds row a of the synapse memory to the
// accumulators of every target. A step closes when an event for a later step
// arrives (or the run ends): neurons are visited in ascending address order
// and, before each one, the scheduler drains every pending event, external
// FIFO first. Spikes of a neuron are therefore seen by higher addresses in the
// same step and by lower ones in the next.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "mcsnn/binary_io.hpp"
#include "mcsnn/encoding.hpp"
#include "mcsnn/error.hpp"
#include "mcsnn/fixed_point.hpp"
#include "mcsnn/quantize.hpp"

namespace mcsnn {

inline constexpr std::size_t kFabricNeurons = 256;
inline constexpr std::size_t kSynapses = kFabricNeurons * kFabricNeurons;
inline constexpr std::uint16_t kImageVersion = 1;
inline constexpr std::size_t kNeuronRecordBytes = 16;
inline constexpr std::size_t kImageBytes = 4 + 2 + kFabricNeurons * kNeuronRecordBytes + kSynapses;
inline constexpr std::size_t kDefaultFifoCapacity = 1024;

// ---------------------------------------------------------------------------
// AER packets

struct AerPacket {
    std::uint8_t neuron_addr = 0;
    std::uint8_t burst_len_minus1 = 0;
    std::uint8_t isi = 0;
    bool operator==(const AerPacket&) const = default;
};

inline std::uint16_t pack_packet(unsigned addr, unsigned burst_len_minus1, unsigned isi) {
    require(addr < 256, "AER field overflow: address " + std::to_string(addr) + " exceeds 8 bits");
    require(burst_len_minus1 < 8, "AER field overflow: burst " + std::to_string(burst_len_minus1) + " exceeds 3 bits");
    require(isi < 8, "AER field overflow: isi " + std::to_string(isi) + " exceeds 3 bits");
    return static_cast<std::uint16_t>((addr << 6) | (burst_len_minus1 << 3) | isi);
}

inline std::uint16_t pack_packet(const AerPacket& p) { return pack_packet(p.neuron_addr, p.burst_len_minus1, p.isi); }

inline AerPacket unpack_packet(std::uint16_t word) {
    require(word < (1u << 14), "AER field overflow: packet word exceeds 14 bits");
    return {static_cast<std::uint8_t>(word >> 6), static_cast<std::uint8_t>((word >> 3) & 7u),
            static_cast<std::uint8_t>(word & 7u)};
}

struct TimedPacket {
    std::uint32_t time = 0;
    std::uint16_t packed = 0;
    bool operator==(const TimedPacket&) const = default;
    auto operator<=>(const TimedPacket&) const = default;
};

inline void save_aer_stream(const std::vector<TimedPacket>& stream, const std::string& path) {
    bin::Writer w;
    for (const auto& p : stream) {
        w.u32(p.time);
        w.u16(p.packed);
    }
    w.save(path);
}

inline std::vector<TimedPacket> load_aer_stream(const std::string& path) {
    auto r = bin::Reader::load(path);
    require(r.remaining() % 6 == 0, path + ": size mismatch (AER records are 6 bytes)");
    std::vector<TimedPacket> out;
    while (!r.at_end()) {
        TimedPacket p;
        p.time = r.u32();
        p.packed = r.u16();
        unpack_packet(p.packed);
        out.push_back(p);
    }
    return out;
}

/// One packet per input spike, ordered by (time, address).
inline std::vector<TimedPacket> spikes_to_stream(const SpikeTensor& x, std::size_t batch_item = 0,
                                                 std::size_t base_addr = 0) {
    require(base_addr + x.features() <= kFabricNeurons, "input spikes do not fit the 256-neuron address space");
    std::vector<TimedPacket> out;
    for (std::size_t t = 0; t < x.t_steps(); ++t)
        for (std::size_t f = 0; f < x.features(); ++f)
            if (x(t, batch_item, f))
                out.push_back({static_cast<std::uint32_t>(t), pack_packet(static_cast<unsigned>(base_addr + f), 0, 0)});
    return out;
}

// ---------------------------------------------------------------------------
// Memories

enum class FabricNeuron : std::uint8_t { off = 0, lif = 1, mcleaky = 2 };

struct NeuronMemoryWord {
    FabricNeuron kind = FabricNeuron::off;
    std::uint8_t compartments = 0;
    std::uint8_t layer = 0;
    std::uint8_t threshold = 0;
    std::int8_t threshold_shift = 0;
    std::int8_t weight_shift = 0;
    bool last_spike = false;
    std::int16_t bias = 0;
    std::int16_t v_d2 = 0;
    std::int16_t v_d1 = 0;
    std::int16_t v_soma = 0;

    bool operator==(const NeuronMemoryWord&) const = default;
};

inline const FixedPointFormat& fabric_state_format() {
    static const FixedPointFormat f{16, 8, true};
    return f;
}

struct MemoryImage {
    std::array<NeuronMemoryWord, kFabricNeurons> neurons{};
    std::vector<std::int8_t> weights = std::vector<std::int8_t>(kSynapses, 0);

    std::int8_t weight(std::size_t src, std::size_t dst) const { return weights[src * kFabricNeurons + dst]; }
    void set_weight(std::size_t src, std::size_t dst, std::int8_t w) { weights[src * kFabricNeurons + dst] = w; }

    bool operator==(const MemoryImage&) const = default;
};

inline std::vector<std::uint8_t> encode_image(const MemoryImage& img) {
    bin::Writer w;
    w.magic("MCQI");
    w.u16(kImageVersion);
    for (const auto& n : img.neurons) {
        w.u8(static_cast<std::uint8_t>(n.kind));
        w.u8(n.compartments);
        w.u8(n.layer);
        w.u8(n.threshold);
        w.i8(n.threshold_shift);
        w.i8(n.weight_shift);
        w.u8(n.last_spike ? 1 : 0);
        w.u8(0);
        w.i16(n.bias);
        w.i16(n.v_d2);
        w.i16(n.v_d1);
        w.i16(n.v_soma);
    }
    for (auto x : img.weights) w.i8(x);
    return w.data();
}

inline MemoryImage decode_image(bin::Reader& r) {
    r.expect_magic("MCQI");
    const auto version = r.u16();
    require(version == kImageVersion, r.name() + ": unsupported image version " + std::to_string(version));
    require(r.remaining() == kImageBytes - 6, r.name() + ": size mismatch (expected " + std::to_string(kImageBytes) +
                                                  " bytes)");
    MemoryImage img;
    for (std::size_t a = 0; a < kFabricNeurons; ++a) {
        auto& n = img.neurons[a];
        const auto kind = r.u8();
        require(kind <= 2, r.name() + ": neuron " + std::to_string(a) + " has unknown kind");
        n.kind = static_cast<FabricNeuron>(kind);
        n.compartments = r.u8();
        const std::uint8_t expected = n.kind == FabricNeuron::mcleaky ? 3 : n.kind == FabricNeuron::lif ? 1 : 0;
        require(n.compartments == expected,
                r.name() + ": neuron " + std::to_string(a) + " compartment count does not match its kind");
        n.layer = r.u8();
        n.threshold = r.u8();
        n.threshold_shift = r.i8();
        n.weight_shift = r.i8();
        const auto last = r.u8();
        require(last <= 1, r.name() + ": neuron " + std::to_string(a) + " has an invalid spike flag");
        n.last_spike = last == 1;
        r.u8();
        n.bias = r.i16();
        n.v_d2 = r.i16();
        n.v_d1 = r.i16();
        n.v_soma = r.i16();
        require(n.threshold_shift > -32 && n.threshold_shift < 32 && n.weight_shift > -32 && n.weight_shift < 32,
                r.name() + ": neuron " + std::to_string(a) + " has an out-of-range shift");
    }
    for (auto& x : img.weights) x = r.i8();
    r.expect_end();
    return img;
}

inline void save_memory_image(const MemoryImage& img, const std::string& path) {
    bin::Writer w;
    const auto bytes = encode_image(img);
    w.bytes(bytes.data(), bytes.size());
    w.save(path);
}

inline MemoryImage load_memory_image(const std::string& path) {
    auto r = bin::Reader::load(path);
    return decode_image(r);
}

/// Address range [base, base + count) of each computing layer.
struct LayerRange {
    std::size_t base = 0;
    std::size_t count = 0;
};

struct ImageLayout {
    std::size_t input_count = 0;
    std::vector<LayerRange> layers;
};

inline ImageLayout image_layout(const QuantizedModel& q) {
    ImageLayout l;
    l.input_count = q.input_dim;
    std::size_t next = q.input_dim;
    for (const auto& layer : q.layers) {
        l.layers.push_back({next, layer.out()});
        next += layer.out();
    }
    require(next <= kFabricNeurons, "network needs " + std::to_string(next) + " neurons, the fabric has 256");
    return l;
}

/// Maps inputs to [0, input_dim) and each layer to the next free addresses.
inline MemoryImage export_image(const QuantizedModel& q) {
    require(q.state == fabric_state_format(), "the processor stores 16-bit state with 8 fractional bits");
    require(q.threshold.total_bits == 8 && !q.threshold.is_signed, "the processor stores 8-bit unsigned thresholds");
    const auto layout = image_layout(q);
    MemoryImage img;
    std::size_t src_base = 0;
    for (std::size_t li = 0; li < q.layers.size(); ++li) {
        const auto& layer = q.layers[li];
        const auto& range = layout.layers[li];
        require(layer.weights.format.total_bits <= 8, "the processor stores weights of at most 8 bits");
        for (std::size_t j = 0; j < layer.out(); ++j) {
            auto& n = img.neurons[range.base + j];
            n.kind = FabricNeuron::mcleaky;
            n.compartments = 3;
            n.layer = static_cast<std::uint8_t>(li + 1);
            n.threshold = static_cast<std::uint8_t>(layer.threshold_raw[j]);
            n.threshold_shift = static_cast<std::int8_t>(q.state.frac_bits - q.threshold.frac_bits);
            n.weight_shift = static_cast<std::int8_t>(q.state.frac_bits - layer.weights.format.frac_bits);
            n.bias = static_cast<std::int16_t>(layer.bias.raw[j]);
        }
        for (std::size_t i = 0; i < layer.in(); ++i)
            for (std::size_t j = 0; j < layer.out(); ++j)
                img.set_weight(src_base + i, range.base + j, static_cast<std::int8_t>(layer.weights.at(i, j)));
        src_base = range.base;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Datapath

/// Threshold of a word in the state format.
inline std::int64_t word_threshold(const NeuronMemoryWord& w) {
    return saturate(align(w.threshold, w.threshold_shift), fabric_state_format());
}

/// Synaptic sum to membrane current: realign, add bias, saturate.
inline std::int64_t synaptic_current(const NeuronMemoryWord& w, std::int64_t accumulated) {
    return saturate(align(accumulated, w.weight_shift) + w.bias, fabric_state_format());
}

/// Dendrite block: updates both dendrites and returns the soma drive. A
/// single-compartment neuron passes its input straight through.
inline std::int64_t dendrite_update(NeuronMemoryWord& w, std::int64_t input) {
    if (w.kind != FabricNeuron::mcleaky) return input;
    const auto& f = fabric_state_format();
    const std::int64_t d1 = w.v_d1, d2 = w.v_d2, s = w.v_soma;
    const std::int64_t nd2 = saturate(d2 - (d2 >> 3) + (d1 - (d1 >> 3)) + input, f);
    const std::int64_t nd1 = saturate(d1 - (d1 >> 3) + (nd2 - (nd2 >> 3)) + (s - (s >> 3)), f);
    w.v_d2 = static_cast<std::int16_t>(nd2);
    w.v_d1 = static_cast<std::int16_t>(nd1);
    return nd1 - (nd1 >> 3);
}

/// Soma block: leak, add the drive, subtract the threshold if the neuron
/// fired last step, compare.
inline bool soma_update(NeuronMemoryWord& w, std::int64_t drive) {
    const auto& f = fabric_state_format();
    const std::int64_t theta = word_threshold(w);
    const std::int64_t s = w.v_soma;
    const std::int64_t ns = saturate(s - (s >> 3) + drive - (w.last_spike ? theta : 0), f);
    w.v_soma = static_cast<std::int16_t>(ns);
    w.last_spike = ns >= theta;
    return w.last_spike;
}

// ---------------------------------------------------------------------------
// Scheduler and controller

class SchedulerFifo {
public:
    explicit SchedulerFifo(std::size_t capacity = kDefaultFifoCapacity) : capacity_(capacity) {
        require(capacity >= 1, "FIFO capacity must be at least 1");
    }
    bool push(std::uint16_t packet) {
        if (q_.size() >= capacity_) return false;
        q_.push_back(packet);
        return true;
    }
    std::uint16_t pop() {
        const auto p = q_.front();
        q_.pop_front();
        return p;
    }
    bool empty() const { return q_.empty(); }
    std::size_t size() const { return q_.size(); }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::deque<std::uint16_t> q_;
};

/// External events always win arbitration.
class Scheduler {
public:
    explicit Scheduler(std::size_t capacity = kDefaultFifoCapacity) : external_(capacity), internal_(capacity) {}

    bool push_external(std::uint16_t p) { return external_.push(p); }
    bool push_internal(std::uint16_t p) { return internal_.push(p); }
    bool empty() const { return external_.empty() && internal_.empty(); }
    std::uint16_t pop() { return external_.empty() ? internal_.pop() : external_.pop(); }

private:
    SchedulerFifo external_;
    SchedulerFifo internal_;
};

enum class Phase { integrating, firing };

struct ControllerState {
    std::uint32_t current_time_step = 0;
    Phase phase = Phase::integrating;
};

class SpikeProcessor {
public:
    explicit SpikeProcessor(MemoryImage image, std::size_t fifo_capacity = kDefaultFifoCapacity)
        : mem_(std::move(image)), scheduler_(fifo_capacity) {
        acc_.fill(0);
    }

    /// Feeds one external event; events for later steps first close every
    /// step in between.
    void push(const TimedPacket& p) {
        unpack_packet(p.packed);
        if (p.time < state_.current_time_step)
            throw ValidationError("time step regression in input stream: " + std::to_string(p.time) + " after " +
                                  std::to_string(state_.current_time_step));
        while (state_.current_time_step < p.time) close_step();
        if (!scheduler_.push_external(p.packed)) throw FifoOverflowError(p.time);
    }

    /// Closes steps until `t_steps` steps have completed.
    void run_until(std::uint32_t t_steps) {
        while (state_.current_time_step < t_steps) close_step();
    }

    void close_step() {
        state_.phase = Phase::firing;
        const auto t = state_.current_time_step;
        for (std::size_t a = 0; a < kFabricNeurons; ++a) {
            drain();
            auto& w = mem_.neurons[a];
            if (w.kind == FabricNeuron::off) continue;
            const std::int64_t current = synaptic_current(w, acc_[a]);
            acc_[a] = 0;
            if (soma_update(w, dendrite_update(w, current))) {
                const auto packet = pack_packet(static_cast<unsigned>(a), 0, 0);
                output_.push_back({t, packet});
                if (!scheduler_.push_internal(packet)) throw FifoOverflowError(t);
            }
        }
        // Events raised by the last neurons integrate into the next step.
        drain();
        state_.phase = Phase::integrating;
        ++state_.current_time_step;
    }

    const std::vector<TimedPacket>& output() const { return output_; }
    const ControllerState& state() const { return state_; }
    const MemoryImage& memory() const { return mem_; }

private:
    void drain() {
        while (!scheduler_.empty()) {
            const auto p = unpack_packet(scheduler_.pop());
            const std::size_t src = p.neuron_addr;
            const std::int64_t repeat = p.burst_len_minus1 + 1;
            for (std::size_t dst = 0; dst < kFabricNeurons; ++dst) acc_[dst] += repeat * mem_.weight(src, dst);
        }
    }

    MemoryImage mem_;
    Scheduler scheduler_;
    ControllerState state_;
    std::array<std::int64_t, kFabricNeurons> acc_{};
    std::vector<TimedPacket> output_;
};

struct InferenceResult {
    /// Every emitted spike, ordered by (time, address).
    std::vector<TimedPacket> output;
    /// Spike count per layer field (index 0 is the input layer and stays 0).
    std::vector<std::size_t> layer_spikes;
    std::uint32_t final_time_step = 0;
};

inline InferenceResult run_inference(const MemoryImage& image, const std::vector<TimedPacket>& input,
                                     std::uint32_t t_steps, std::size_t fifo_capacity = kDefaultFifoCapacity) {
    SpikeProcessor proc(image, fifo_capacity);
    for (const auto& p : input) {
        require(p.time < t_steps, "input event at step " + std::to_string(p.time) + " beyond the run length");
        proc.push(p);
    }
    proc.run_until(t_steps);
    InferenceResult r;
    r.output = proc.output();
    std::size_t max_layer = 0;
    for (const auto& n : image.neurons) max_layer = std::max<std::size_t>(max_layer, n.layer);
    r.layer_spikes.assign(max_layer + 1, 0);
    for (const auto& p : r.output) ++r.layer_spikes[image.neurons[unpack_packet(p.packed).neuron_addr].layer];
    r.final_time_step = proc.state().current_time_step;
    return r;
}

/// Class decision from the output layer's spikes (the highest layer, two
/// neurons in ascending address order); ties go to class 0.
inline int output_class(const MemoryImage& image, const InferenceResult& r) {
    std::uint8_t top = 0;
    for (const auto& n : image.neurons) top = std::max(top, n.layer);
    std::vector<std::size_t> addrs;
    for (std::size_t a = 0; a < kFabricNeurons; ++a)
        if (image.neurons[a].layer == top && image.neurons[a].kind != FabricNeuron::off) addrs.push_back(a);
    require(addrs.size() == 2, "output layer must have exactly two neurons");
    std::array<std::size_t, 2> counts{0, 0};
    for (const auto& p : r.output) {
        const auto a = unpack_packet(p.packed).neuron_addr;
        if (a == addrs[0]) ++counts[0];
        if (a == addrs[1]) ++counts[1];
    }
    return counts[1] > counts[0] ? 1 : 0;
}

} // namespace mcsnn

#endif
