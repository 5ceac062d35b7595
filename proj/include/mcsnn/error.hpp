#ifndef MCSNN_ERROR_HPP
#define MCSNN_ERROR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mcsnn {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, out-of-range arguments, shape mismatches.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Failure while doing otherwise valid work (divergence, buffer overflow).
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

class DivergenceError : public RuntimeFailure {
public:
    explicit DivergenceError(int epoch)
        : RuntimeFailure("training diverged (non-finite loss) at epoch " + std::to_string(epoch)),
          epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class FifoOverflowError : public RuntimeFailure {
public:
    explicit FifoOverflowError(std::uint32_t time_step)
        : RuntimeFailure("scheduler FIFO overflow at time step " + std::to_string(time_step)),
          time_step_(time_step) {}
    std::uint32_t time_step() const noexcept { return time_step_; }

private:
    std::uint32_t time_step_;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ValidationError(message);
}

} // namespace mcsnn

#endif
