#pragma once

#include <stdexcept>
#include <string>

namespace fedclust {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters, dimensions or knob combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Mismatched matrix/vector/model shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or insufficient data (empty shards, labels out of range, bad CSV).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong protocol state.
class StateError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedclust
