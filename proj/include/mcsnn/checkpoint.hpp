#ifndef MCSNN_CHECKPOINT_HPP
#define MCSNN_CHECKPOINT_HPP

// Model checkpoint (little endian):
//   "MCQM"  u16 version
//   str     network spec as JSON (u32 length + bytes)
//   u32     parameter count, then that many f32 values in storage order
//   u32     epochs, then per epoch: u32 epoch, f64 lr, loss, train_acc, test_acc
//   str     spike statistics of the last evaluation as JSON

#include <string>

#include "mcsnn/binary_io.hpp"
#include "mcsnn/network.hpp"

namespace mcsnn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& m) {
    bin::Writer w;
    w.magic("MCQM");
    w.u16(kCheckpointVersion);
    w.str(to_json(m.spec).dump());
    const auto flat = m.flat();
    w.u32(static_cast<std::uint32_t>(flat.size()));
    for (double v : flat) w.f32(static_cast<float>(v));
    w.u32(static_cast<std::uint32_t>(m.history.size()));
    for (const auto& r : m.history) {
        w.u32(static_cast<std::uint32_t>(r.epoch));
        w.f64(r.lr);
        w.f64(r.loss);
        w.f64(r.train_acc);
        w.f64(r.test_acc);
    }
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& s : m.spike_stats) stats.push_back(to_json(s));
    w.str(stats.dump());
    return w.data();
}

inline TrainedModel decode_checkpoint(bin::Reader& r) {
    r.expect_magic("MCQM");
    const auto version = r.u16();
    require(version == kCheckpointVersion, r.name() + ": unsupported checkpoint version " + std::to_string(version));
    NetworkSpec spec;
    try {
        spec = network_spec_from_json(nlohmann::json::parse(r.str()));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(r.name() + ": malformed network spec: " + e.what());
    }
    auto m = init_model(spec, 0);
    const auto n = r.u32();
    require(n == m.parameter_count(), r.name() + ": parameter count " + std::to_string(n) +
                                          " does not match the spec (" + std::to_string(m.parameter_count()) + ")");
    std::vector<double> flat(n);
    for (auto& v : flat) v = r.f32();
    m.set_flat(flat);
    const auto epochs = r.u32();
    for (std::uint32_t i = 0; i < epochs; ++i) {
        EpochRecord rec;
        rec.epoch = r.u32();
        rec.lr = r.f64();
        rec.loss = r.f64();
        rec.train_acc = r.f64();
        rec.test_acc = r.f64();
        m.history.push_back(rec);
    }
    try {
        for (const auto& j : nlohmann::json::parse(r.str())) m.spike_stats.push_back(layer_stats_from_json(j));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(r.name() + ": malformed spike statistics: " + e.what());
    }
    r.expect_end();
    return m;
}

inline void save_checkpoint(const TrainedModel& m, const std::string& path) {
    bin::Writer w;
    const auto bytes = encode_checkpoint(m);
    w.bytes(bytes.data(), bytes.size());
    w.save(path);
}

inline TrainedModel load_checkpoint(const std::string& path) {
    auto r = bin::Reader::load(path);
    return decode_checkpoint(r);
}

} // namespace mcsnn

#endif
