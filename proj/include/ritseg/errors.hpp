#pragma once

#include <stdexcept>
#include <string>

namespace ritseg {

// Error taxonomy mirrored by the CLI exit codes:
//   UsageError/ConfigError -> 1, DataError -> 2, CheckpointError -> 3.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : Error {
    using Error::Error;
};

// Bad parameter values (probabilities out of range, low >= high, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Tensor/image dimension violations.
struct ShapeError : Error {
    using Error::Error;
};

// Anything wrong with input data: unreadable files, label ids out of
// range, orphaned image/label pairs, dims not divisible by 16.
struct DataError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    enum class Kind {
        format,         // bad magic or unsupported version
        truncated,      // file ends mid-record
        unknown_tensor, // name not present in the model registry
        missing_tensor, // registry entry absent from the file
        dim_mismatch,
    };
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
    Kind kind;
};

} // namespace ritseg
