#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evb {

// Argument errors use std::invalid_argument; the types below cover the rest.

class ParseError : public std::runtime_error {
 public:
  // `location` is a 1-based line number for text formats and a byte offset
  // for binary ones.
  ParseError(const std::string& what, std::size_t location)
      : std::runtime_error(what + " (at " + std::to_string(location) + ")"),
        location_(location) {}

  std::size_t location() const { return location_; }

 private:
  std::size_t location_;
};

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace evb
