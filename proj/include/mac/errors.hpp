#pragma once

#include <stdexcept>
#include <string>

namespace mac {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector length does not match the configured head dimension.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A token range or position falls outside the stored sequence.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Removing a band would leave a numerically meaningless remainder; the
/// caller must recompute from scratch.
class CancellationError : public Error {
 public:
  using Error::Error;
};

/// The band to remove carries more mass than the summary it is removed from.
class MassExceeded : public Error {
 public:
  using Error::Error;
};

/// finalize() called on a summary covering no tokens.
class EmptySummary : public Error {
 public:
  using Error::Error;
};

/// Trace directory could not be read or written, or its contents are
/// inconsistent with the manifest.
class TraceIoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mac
