#ifndef MCSNN_INGEST_HPP
#define MCSNN_INGEST_HPP

// JSON manifest driving the full ingest pipeline:
//
//   {
//     "window": 128, "overlap": 0.5, "train_fraction": 0.8, "seed": 7,
//     "streams": [
//       {"path": "chest.csv", "modality": "eda_chest", "sample_rate_hz": 700, "downsample_factor": 175},
//       {"path": "wrist.csv", "modality": "eda_wrist", "sample_rate_hz": 4, "downsample_factor": 1}
//     ]
//   }
//
// Instead of "streams", a manifest may carry
//   "synthetic": {"n_windows": 100, "window_len": 256, "seed": 42}
// Relative paths resolve against the manifest's directory.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsnn/dataset_io.hpp"
#include "mcsnn/signal.hpp"

namespace mcsnn {

struct StreamEntry {
    std::string path;
    Modality modality = Modality::synthetic;
    std::optional<double> sample_rate_hz;
    std::size_t downsample_factor = 1;
};

struct SyntheticEntry {
    std::size_t n_windows = 100;
    std::size_t window_len = 256;
    std::uint64_t seed = 42;
};

struct IngestManifest {
    std::size_t window = 128;
    double overlap = 0.5;
    double train_fraction = 0.8;
    std::uint64_t seed = 7;
    std::vector<StreamEntry> streams;
    std::optional<SyntheticEntry> synthetic;
};

inline IngestManifest parse_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    const auto base = std::filesystem::path(path).parent_path();
    IngestManifest m;
    try {
        m.window = j.value("window", m.window);
        m.overlap = j.value("overlap", m.overlap);
        m.train_fraction = j.value("train_fraction", m.train_fraction);
        m.seed = j.value("seed", m.seed);
        if (j.contains("synthetic")) {
            const auto& s = j["synthetic"];
            SyntheticEntry e;
            e.n_windows = s.value("n_windows", e.n_windows);
            e.window_len = s.value("window_len", e.window_len);
            e.seed = s.value("seed", e.seed);
            m.synthetic = e;
        }
        for (const auto& s : j.value("streams", nlohmann::json::array())) {
            StreamEntry e;
            std::filesystem::path p = s.at("path").get<std::string>();
            e.path = (p.is_relative() ? base / p : p).string();
            e.modality = parse_modality(s.value("modality", std::string("synthetic")));
            if (s.contains("sample_rate_hz")) e.sample_rate_hz = s["sample_rate_hz"].get<double>();
            e.downsample_factor = s.value("downsample_factor", std::size_t{1});
            m.streams.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    require(m.synthetic || !m.streams.empty(), path + ": manifest lists no streams");
    return m;
}

/// Checks every input path before any work happens.
inline void validate_manifest_paths(const IngestManifest& m) {
    for (const auto& s : m.streams)
        if (!std::filesystem::exists(s.path)) throw ValidationError("input file not found: " + s.path);
}

/// normalize -> downsample -> binarize -> window for one stream.
inline WindowedDataset ingest_stream(const StreamEntry& s, std::size_t window_len, double overlap) {
    auto rec = load_recording(s.path);
    rec.modality = s.modality;
    if (s.sample_rate_hz) rec.sample_rate_hz = *s.sample_rate_hz;
    rec = minmax_normalize(std::move(rec));
    rec = downsample(rec, s.downsample_factor);
    rec = binarize_labels(std::move(rec));
    return window(rec, window_len, overlap);
}

inline WindowedDataset ingest_fused(const IngestManifest& m) {
    if (m.synthetic) return synth_dataset(m.synthetic->n_windows, m.synthetic->window_len, m.synthetic->seed);
    validate_manifest_paths(m);
    std::vector<WindowedDataset> parts;
    for (const auto& s : m.streams) {
        try {
            parts.push_back(ingest_stream(s, m.window, m.overlap));
        } catch (const ValidationError& e) {
            const std::string msg = e.what();
            throw ValidationError(msg.starts_with(s.path) ? msg : s.path + ": " + msg);
        }
    }
    return fuse_early(parts);
}

inline SplitDataset run_ingest(const IngestManifest& m) {
    return split(ingest_fused(m), m.train_fraction, m.seed);
}

inline void save_split(const SplitDataset& s, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_dataset(s.train, (dir / "train.mcqd").string());
    save_dataset(s.test, (dir / "test.mcqd").string());
}

inline SplitDataset load_split(const std::filesystem::path& dir) {
    SplitDataset s;
    s.train = load_dataset((dir / "train.mcqd").string());
    s.test = load_dataset((dir / "test.mcqd").string());
    require(s.train.window_len == s.test.window_len, "train and test window lengths differ");
    const auto total = s.train.size() + s.test.size();
    s.train_fraction = total ? static_cast<double>(s.train.size()) / static_cast<double>(total) : 0.0;
    return s;
}

} // namespace mcsnn

#endif
