#pragma once

#include <stdexcept>
#include <string>

namespace segrobust {

// Base class for all library errors. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor/volume shape or rank violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values, unknown config keys, bad argument combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File format violations, truncation, filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Statistical test undefined for the given input.
class StatsError : public Error {
 public:
  using Error::Error;
};

}  // namespace segrobust
