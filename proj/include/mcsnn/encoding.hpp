#ifndef MCSNN_ENCODING_HPP
#define MCSNN_ENCODING_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "mcsnn/error.hpp"
#include "mcsnn/random.hpp"

namespace mcsnn {

/// Binary spike trains laid out [time][batch][feature].
class SpikeTensor {
public:
    SpikeTensor() = default;
    SpikeTensor(std::size_t t_steps, std::size_t batch, std::size_t features)
        : t_(t_steps), b_(batch), f_(features), data_(t_steps * batch * features, 0) {
        require(t_steps >= 1 && batch >= 1 && features >= 1, "spike tensor dimensions must be positive");
    }

    std::size_t t_steps() const { return t_; }
    std::size_t batch() const { return b_; }
    std::size_t features() const { return f_; }

    std::uint8_t operator()(std::size_t t, std::size_t b, std::size_t f) const { return data_[index(t, b, f)]; }
    void set(std::size_t t, std::size_t b, std::size_t f, bool spike) { data_[index(t, b, f)] = spike ? 1 : 0; }

    /// The [batch][feature] slab at step t.
    std::span<const std::uint8_t> step(std::size_t t) const { return {data_.data() + t * b_ * f_, b_ * f_}; }

    std::span<const std::uint8_t> raw() const { return data_; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto s : data_) n += s;
        return n;
    }

    bool operator==(const SpikeTensor&) const = default;

private:
    std::size_t index(std::size_t t, std::size_t b, std::size_t f) const { return (t * b_ + b) * f_ + f; }

    std::size_t t_ = 0, b_ = 0, f_ = 0;
    std::vector<std::uint8_t> data_;
};

namespace detail {

inline void encode_into(SpikeTensor& out, std::size_t b, std::span<const double> window, std::uint64_t seed) {
    for (double v : window) require(v >= 0.0 && v <= 1.0, "rate encoding needs values in [0,1]");
    Rng rng(seed);
    for (std::size_t t = 0; t < out.t_steps(); ++t)
        for (std::size_t f = 0; f < window.size(); ++f) out.set(t, b, f, uniform01(rng) < window[f]);
}

} // namespace detail

/// Per-step Bernoulli draws with success probability equal to each value; the
/// spike count per feature is Binomial(t_steps, value).
inline SpikeTensor rate_encode(std::span<const double> window, std::size_t t_steps, std::uint64_t seed) {
    require(!window.empty(), "cannot encode an empty window");
    SpikeTensor out(t_steps, 1, window.size());
    detail::encode_into(out, 0, window, seed);
    return out;
}

/// Encodes several windows into one batch; window i uses seeds[i].
inline SpikeTensor rate_encode_batch(std::span<const std::span<const double>> windows, std::size_t t_steps,
                                     std::span<const std::uint64_t> seeds) {
    require(!windows.empty() && windows.size() == seeds.size(), "rate_encode_batch needs one seed per window");
    SpikeTensor out(t_steps, windows.size(), windows.front().size());
    for (std::size_t b = 0; b < windows.size(); ++b) {
        require(windows[b].size() == out.features(), "batched windows differ in length");
        detail::encode_into(out, b, windows[b], seeds[b]);
    }
    return out;
}

} // namespace mcsnn

#endif
