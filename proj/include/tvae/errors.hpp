#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tvae {

// All library failures derive from tvae::Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace tvae
