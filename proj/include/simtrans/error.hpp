#pragma once

#include <stdexcept>
#include <string>

namespace simtrans {

/// Shapes of two operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or another non-finite value reached a place that cannot accept it.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model or training configuration is internally inconsistent.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke a function precondition (non-scalar loss, bad label, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace simtrans
