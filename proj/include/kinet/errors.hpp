#pragma once

#include <stdexcept>
#include <string>

namespace kinet {

// Error categories map 1:1 onto the CLI exit codes (see tools/).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor extent mismatches. Reported as configuration problems at the CLI
// boundary since they can only arise from config/data inconsistencies.
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

// Out-of-range labels, malformed records and the like.
struct ValidationError : DataError {
    using DataError::DataError;
};

}  // namespace kinet
