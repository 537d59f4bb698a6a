#pragma once

#include <stdexcept>
#include <string>

namespace att3d {

/// Shapes or layouts of inputs do not fit together.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value lies outside the domain an operation accepts.
class InputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller broke a precondition of an API (e.g. backward from a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Unreadable or incompatible file (bad magic, version, config digest).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File content failed a length or checksum check.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace att3d
