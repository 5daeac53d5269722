#pragma once

#include <stdexcept>
#include <string>

namespace semg {

// Each error kind maps onto one CLI exit code (see tools/semg_cli.cpp).

/// Malformed or unreadable input: files, headers, arguments.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset contract violations (missing classes, too few subjects).
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training or inference.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An artifact (model file, feature file) does not match what was expected.
class ArtifactMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace semg
