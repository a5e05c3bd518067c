#pragma once

#include <stdexcept>
#include <string>

namespace vle {

// Base class for every error the toolkit throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem-level failure (open/write/rename), as opposed to bad content.
class IoError : public Error {
 public:
  using Error::Error;
};

// File contents do not parse: bad syntax, truncated line, odd token count.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Content parses but violates the format contract (level mismatch,
// inconsistent dimensions, duplicate ids, bad header).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A model file was loaded as the wrong model kind.
class KindMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Bad value passed to an in-memory operation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A trainer's analytic gradient failed its finite-difference self-check.
class GradientCheckError : public Error {
 public:
  using Error::Error;
};

}  // namespace vle
