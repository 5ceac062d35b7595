#ifndef MCSNN_DATASET_IO_HPP
#define MCSNN_DATASET_IO_HPP

// "MCQD" dataset container, little-endian:
//   magic "MCQD" | u16 version (1) | u32 window_len | u32 n_windows
//   | u32 n_segments | n_segments x (u32 name length, name bytes, u32 segment length)
//   | n_windows*window_len f32 row-major | n_windows u8 labels

#include <string>

#include "mcsnn/binary_io.hpp"
#include "mcsnn/signal.hpp"

namespace mcsnn {

inline constexpr std::uint16_t kDatasetVersion = 1;

inline bin::Writer encode_dataset(const WindowedDataset& ds) {
    bin::Writer w;
    w.magic("MCQD");
    w.u16(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.window_len));
    w.u32(static_cast<std::uint32_t>(ds.size()));
    w.u32(static_cast<std::uint32_t>(ds.provenance.size()));
    for (const auto& seg : ds.provenance) {
        w.str(seg.modality);
        w.u32(seg.length);
    }
    for (double v : ds.values) w.f32(static_cast<float>(v));
    for (auto l : ds.labels) w.u8(l);
    return w;
}

inline void save_dataset(const WindowedDataset& ds, const std::string& path) {
    ds.validate();
    encode_dataset(ds).save(path);
}

inline WindowedDataset decode_dataset(bin::Reader& r) {
    r.expect_magic("MCQD");
    const auto version = r.u16();
    require(version == kDatasetVersion, r.name() + ": unsupported dataset version " + std::to_string(version));
    WindowedDataset ds;
    ds.window_len = r.u32();
    const auto n = r.u32();
    const auto n_segments = r.u32();
    for (std::uint32_t i = 0; i < n_segments; ++i) {
        Segment seg;
        seg.modality = r.str();
        seg.length = r.u32();
        ds.provenance.push_back(std::move(seg));
    }
    require(r.remaining() == static_cast<std::size_t>(n) * ds.window_len * 4 + n,
            r.name() + ": size mismatch");
    ds.values.resize(static_cast<std::size_t>(n) * ds.window_len);
    for (auto& v : ds.values) v = r.f32();
    ds.labels.resize(n);
    for (auto& l : ds.labels) l = r.u8();
    r.expect_end();
    ds.validate();
    return ds;
}

inline WindowedDataset load_dataset(const std::string& path) {
    auto r = bin::Reader::load(path);
    return decode_dataset(r);
}

} // namespace mcsnn

#endif
