#pragma once

#include <stdexcept>
#include <string>

namespace dsreg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when an image or mask cannot be read.
struct LoadError : Error {
  enum class Kind { Unreadable, UnsupportedFormat };
  LoadError(Kind k, const std::string& what) : Error(what), kind(k) {}
  Kind kind;
};

/// A caller broke a documented precondition (shape, size, empty input).
struct ContractViolation : Error {
  using Error::Error;
};

/// Too few or collinear landmarks for a transform fit.
struct DegenerateConfiguration : Error {
  using Error::Error;
};

struct LookupError : Error {
  using Error::Error;
};

/// No transform can be derived, e.g. from an empty correspondence set.
struct NoTransformError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

}  // namespace dsreg
