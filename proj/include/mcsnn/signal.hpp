#ifndef MCSNN_SIGNAL_HPP
#define MCSNN_SIGNAL_HPP

// Raw physiological signal handling: loading, normalization, resampling,
// windowing, label binarization, early fusion and train/test splitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mcsnn/error.hpp"
#include "mcsnn/random.hpp"

namespace mcsnn {

enum class Modality { eda_chest, eda_wrist, temperature, ecg, synthetic };

inline std::string_view to_string(Modality m) {
    switch (m) {
    case Modality::eda_chest: return "eda_chest";
    case Modality::eda_wrist: return "eda_wrist";
    case Modality::temperature: return "temperature";
    case Modality::ecg: return "ecg";
    case Modality::synthetic: return "synthetic";
    }
    return "synthetic";
}

inline Modality parse_modality(std::string_view s) {
    for (auto m : {Modality::eda_chest, Modality::eda_wrist, Modality::temperature, Modality::ecg,
                   Modality::synthetic})
        if (to_string(m) == s) return m;
    throw ValidationError("unknown modality '" + std::string(s) + "'");
}

/// Label assigned to samples that must never end up in a window.
inline constexpr int kDropLabel = -1;

struct RawRecording {
    std::vector<double> samples;
    double sample_rate_hz = 1.0;
    Modality modality = Modality::synthetic;
    std::vector<int> labels;

    std::size_t size() const { return samples.size(); }

    void validate() const {
        require(samples.size() == labels.size(), "recording samples and labels differ in length");
        require(sample_rate_hz > 0.0, "recording sample rate must be positive");
    }
};

struct Segment {
    std::string modality;
    std::uint32_t length = 0;
    bool operator==(const Segment&) const = default;
};

/// Fixed-length windows with binary labels. Values are stored row-major.
struct WindowedDataset {
    std::size_t window_len = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> labels;
    std::vector<Segment> provenance;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }

    std::span<const double> window(std::size_t i) const {
        return {values.data() + i * window_len, window_len};
    }

    void push(std::span<const double> w, std::uint8_t label) {
        require(w.size() == window_len, "window length mismatch");
        values.insert(values.end(), w.begin(), w.end());
        labels.push_back(label);
    }

    /// Same layout, no rows.
    WindowedDataset empty_like() const {
        WindowedDataset out;
        out.window_len = window_len;
        out.provenance = provenance;
        return out;
    }

    WindowedDataset subset(std::span<const std::size_t> indices) const {
        auto out = empty_like();
        out.values.reserve(indices.size() * window_len);
        for (auto i : indices) out.push(window(i), labels[i]);
        return out;
    }

    void validate() const {
        require(window_len > 0, "window length must be positive");
        require(values.size() == labels.size() * window_len, "dataset value block has wrong size");
        for (double v : values) require(v >= 0.0 && v <= 1.0, "dataset value outside [0,1]");
        for (auto l : labels) require(l <= 1, "dataset label is not binary");
        std::size_t total = 0;
        for (const auto& s : provenance) total += s.length;
        require(total == window_len, "provenance segments do not sum to the window length");
    }

    bool operator==(const WindowedDataset&) const = default;
};

struct SplitDataset {
    WindowedDataset train;
    WindowedDataset test;
    double train_fraction = 0.8;
};

// ---------------------------------------------------------------------------
// Loading

enum class RecordingFormat { csv };

inline RecordingFormat parse_recording_format(std::string_view s) {
    if (s == "csv") return RecordingFormat::csv;
    throw ValidationError("unknown recording format '" + std::string(s) + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    std::string buf(s);
    char* end = nullptr;
    out = std::strtod(buf.c_str(), &end);
    return end == buf.c_str() + buf.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view s, int& out) {
    double d = 0;
    if (!parse_double(s, d) || d != std::floor(d)) return false;
    out = static_cast<int>(d);
    return true;
}

} // namespace detail

/// Reads a `value,label` CSV. Optional `# key: value` comment lines before the
/// header set `sample_rate_hz` and `modality`. Rows with an empty label cell
/// are unlabeled and receive kDropLabel.
inline RawRecording load_recording(const std::string& path, RecordingFormat format = RecordingFormat::csv) {
    (void)format;
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open recording '" + path + "'");

    RawRecording rec;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    auto where = [&] { return path + ":" + std::to_string(line_no); };

    while (std::getline(in, line)) {
        ++line_no;
        auto view = detail::trim(line);
        if (view.empty()) continue;
        if (view.front() == '#') {
            auto body = detail::trim(view.substr(1));
            auto colon = body.find(':');
            if (colon == std::string_view::npos) continue;
            auto key = detail::trim(body.substr(0, colon));
            auto value = detail::trim(body.substr(colon + 1));
            if (key == "sample_rate_hz") {
                if (!detail::parse_double(value, rec.sample_rate_hz) || rec.sample_rate_hz <= 0)
                    throw ValidationError(where() + ": malformed row (bad sample_rate_hz)");
            } else if (key == "modality") {
                rec.modality = parse_modality(value);
            }
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            if (view != "value,label")
                throw ValidationError(where() + ": malformed row (expected header 'value,label')");
            continue;
        }
        auto comma = view.find(',');
        if (comma == std::string_view::npos || view.find(',', comma + 1) != std::string_view::npos)
            throw ValidationError(where() + ": malformed row (expected two columns)");
        auto value_cell = detail::trim(view.substr(0, comma));
        auto label_cell = detail::trim(view.substr(comma + 1));
        if (value_cell.empty())
            throw ValidationError(where() + ": length mismatch between value and label columns");
        double value = 0;
        if (!detail::parse_double(value_cell, value))
            throw ValidationError(where() + ": malformed row (non-numeric value)");
        int label = kDropLabel;
        if (!label_cell.empty() && !detail::parse_int(label_cell, label))
            throw ValidationError(where() + ": malformed row (non-integer label)");
        rec.samples.push_back(value);
        rec.labels.push_back(label);
    }
    if (!header_seen) throw ValidationError(path + ": malformed row (missing header)");
    rec.validate();
    return rec;
}

// ---------------------------------------------------------------------------
// Transforms

inline RawRecording minmax_normalize(RawRecording rec) {
    require(!rec.samples.empty(), "cannot normalize an empty recording");
    auto [lo_it, hi_it] = std::minmax_element(rec.samples.begin(), rec.samples.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        std::fill(rec.samples.begin(), rec.samples.end(), 0.0);
        return rec;
    }
    for (auto& x : rec.samples) x = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    return rec;
}

/// Block mean over `factor` samples; labels by majority vote (ties go to the
/// smallest label, so a tie with kDropLabel drops the block).
inline RawRecording downsample(const RawRecording& rec, std::size_t factor) {
    require(factor >= 1, "downsample factor must be at least 1");
    rec.validate();
    RawRecording out;
    out.modality = rec.modality;
    out.sample_rate_hz = rec.sample_rate_hz / static_cast<double>(factor);
    const std::size_t n = rec.size() / factor;
    out.samples.reserve(n);
    out.labels.reserve(n);
    std::map<int, std::size_t> votes;
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0;
        votes.clear();
        for (std::size_t k = i * factor; k < (i + 1) * factor; ++k) {
            sum += rec.samples[k];
            ++votes[rec.labels[k]];
        }
        int best = votes.begin()->first;
        std::size_t best_count = 0;
        for (auto [label, count] : votes)
            if (count > best_count) best = label, best_count = count;
        out.samples.push_back(sum / static_cast<double>(factor));
        out.labels.push_back(best);
    }
    return out;
}

/// Stress (2) becomes 1; baseline (0) and amusement (1) become 0; everything
/// else is dropped.
inline int binarize_label(int source) {
    switch (source) {
    case 2: return 1;
    case 0:
    case 1: return 0;
    default: return kDropLabel;
    }
}

inline RawRecording binarize_labels(RawRecording rec) {
    for (auto& l : rec.labels) l = binarize_label(l);
    return rec;
}

/// Sliding windows at a stride of size*(1-overlap). Windows whose labels are
/// not all identical, or contain kDropLabel, are discarded.
inline WindowedDataset window(const RawRecording& rec, std::size_t size, double overlap) {
    rec.validate();
    require(size >= 1, "window size must be positive");
    require(overlap >= 0.0 && overlap < 1.0, "window overlap must lie in [0,1)");
    require(size <= rec.size(), "window size exceeds recording length");
    const double stride_real = static_cast<double>(size) * (1.0 - overlap);
    const auto stride = static_cast<std::size_t>(std::llround(stride_real));
    require(stride >= 1 && std::abs(stride_real - static_cast<double>(stride)) < 1e-9,
            "window stride must be a positive integer");

    WindowedDataset ds;
    ds.window_len = size;
    ds.provenance = {{std::string(to_string(rec.modality)), static_cast<std::uint32_t>(size)}};
    for (std::size_t start = 0; start + size <= rec.size(); start += stride) {
        const int label = rec.labels[start];
        if (label != 0 && label != 1) continue;
        bool pure = std::all_of(rec.labels.begin() + static_cast<std::ptrdiff_t>(start),
                                rec.labels.begin() + static_cast<std::ptrdiff_t>(start + size),
                                [&](int l) { return l == label; });
        if (!pure) continue;
        std::vector<double> w(rec.samples.begin() + static_cast<std::ptrdiff_t>(start),
                              rec.samples.begin() + static_cast<std::ptrdiff_t>(start + size));
        for (auto& x : w) x = std::clamp(x, 0.0, 1.0);
        ds.push(w, static_cast<std::uint8_t>(label));
    }
    return ds;
}

/// Concatenates index-aligned windows of several datasets.
inline WindowedDataset fuse_early(std::span<const WindowedDataset> parts) {
    require(!parts.empty(), "nothing to fuse");
    if (parts.size() == 1) return parts.front();
    const auto n = parts.front().size();
    WindowedDataset out;
    for (const auto& p : parts) {
        require(p.size() == n, "cannot fuse datasets with different window counts");
        out.window_len += p.window_len;
        out.provenance.insert(out.provenance.end(), p.provenance.begin(), p.provenance.end());
    }
    out.values.reserve(n * out.window_len);
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = parts.front().labels[i];
        for (const auto& p : parts) {
            require(p.labels[i] == label, "cannot fuse datasets whose labels differ at window " + std::to_string(i));
            auto w = p.window(i);
            out.values.insert(out.values.end(), w.begin(), w.end());
        }
        out.labels.push_back(label);
    }
    return out;
}

inline SplitDataset split(const WindowedDataset& ds, double train_fraction, std::uint64_t seed) {
    require(train_fraction > 0.0 && train_fraction < 1.0, "train fraction must lie in (0,1)");
    require(ds.size() >= 2, "need at least two windows to split");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0x5B117}));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * train_fraction));
    std::span<const std::size_t> all(order);
    return {ds.subset(all.first(n_train)), ds.subset(all.subspan(n_train)), train_fraction};
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Balanced two-class stand-in for EDA windows. Class 1 is a slowly rising
/// tonic level with superimposed phasic bursts (fast rise, exponential
/// recovery); class 0 is a flat level with sensor noise. Labels alternate
/// 0,1,0,1,... so class counts differ by at most one.
inline WindowedDataset synth_dataset(std::size_t n_windows, std::size_t window_len, std::uint64_t seed) {
    require(n_windows >= 2, "synthetic dataset needs at least two windows");
    require(window_len >= 8, "synthetic windows need at least 8 samples");
    WindowedDataset ds;
    ds.window_len = window_len;
    ds.provenance = {{"synthetic", static_cast<std::uint32_t>(window_len)}};
    const double len = static_cast<double>(window_len);
    std::vector<double> w(window_len);
    for (std::size_t i = 0; i < n_windows; ++i) {
        Rng rng(derive_seed(seed, {0x5E7D, i}));
        const auto label = static_cast<std::uint8_t>(i % 2);
        const double base = uniform(rng, 0.15, 0.30);
        const double noise = 0.03;
        if (label == 0) {
            for (auto& x : w) x = base + gaussian(rng, 0.0, noise);
        } else {
            const double rise = uniform(rng, 0.15, 0.35);
            for (std::size_t k = 0; k < window_len; ++k)
                w[k] = base + rise * static_cast<double>(k) / len + gaussian(rng, 0.0, noise);
            const auto bursts = uniform_int(rng, 2, 4);
            const double tau = std::max(2.0, len / 16.0);
            const double rise_time = std::max(1.0, len / 64.0);
            for (long long b = 0; b < bursts; ++b) {
                const double amp = uniform(rng, 0.08, 0.30);
                const double onset = uniform(rng, 0.0, len * 0.9);
                for (std::size_t k = 0; k < window_len; ++k) {
                    const double dt = static_cast<double>(k) - onset;
                    if (dt < 0) continue;
                    const double shape = dt < rise_time ? dt / rise_time : std::exp(-(dt - rise_time) / tau);
                    w[k] += amp * shape;
                }
            }
        }
        for (auto& x : w) x = std::clamp(x, 0.0, 1.0);
        ds.push(w, label);
    }
    return ds;
}

} // namespace mcsnn

#endif
