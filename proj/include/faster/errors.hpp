#pragma once

#include <stdexcept>
#include <string>

namespace faster {

/// Tensor extents that do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced by an op, or a non-finite training loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the autograd tape (non-scalar loss, double backward, ...).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed on-disk artifact: dataset files, checkpoints.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint payload whose CRC32C does not match its manifest.
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Artifact written with an unsupported format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Artifact that ends before its declared contents.
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Invalid user configuration (bad pattern, unknown preset, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data that cannot be used (empty dataset, label out of range, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace faster
