#pragma once

#include <stdexcept>
#include <string>

namespace patchcast {

// Shape or axis disagreement between tensors / model stages.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid argument value (rates, ratios, counts, geometry).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Value outside the mathematical domain of an operation (log of a
// non-positive number, non-positive variance, constant series for RSE).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Malformed input file: CSV cells, checkpoints, version mismatches.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad experiment configuration (unknown keys, missing sections, conflicts).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Failure inside the optimization loop (non-finite loss or gradient).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem problems: unwritable paths, existing output directories.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace patchcast
