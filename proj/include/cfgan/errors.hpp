#pragma once

#include <stdexcept>

namespace cfgan {

// Invalid or inconsistent configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing, unreadable or unusable input data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A non-finite loss or a collapsed generator stopped training.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace cfgan
