#pragma once

#include <stdexcept>
#include <string>

namespace htgnn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
struct DimensionError : Error { using Error::Error; };
// Violated precondition of an operation.
struct ContractError : Error { using Error::Error; };
// Malformed records, files, or missing fields. CLI exit code 2.
struct DataError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
// Degenerate input for which a metric is undefined.
struct MetricError : Error { using Error::Error; };
// Non-finite training loss. CLI exit code 3.
struct DivergenceError : Error { using Error::Error; };

}  // namespace htgnn
