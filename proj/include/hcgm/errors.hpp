#pragma once

#include <stdexcept>
#include <string>

namespace hcgm {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer shape or dimension mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// Missing or malformed files, datasets, checkpoints.
struct DataError : Error {
    using Error::Error;
};

// Bad configuration values or unknown config keys.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values or other numeric failures at runtime.
struct NumericError : Error {
    using Error::Error;
};

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace hcgm
