#pragma once

#include <stdexcept>
#include <string>

namespace demblind {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Header or sidecar content that does not parse.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload size disagrees with the declared raster dimensions.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Covariance matrix not factorizable, even after diagonal jitter.
class DegenerateModel : public Error {
 public:
  using Error::Error;
};

/// Reduced Fisher information is singular; the patch carries no information
/// on the requested parameter.
class UnboundedCrlb : public Error {
 public:
  using Error::Error;
};

/// Regression design is rank deficient or has too few rows.
class ModelInestimable : public Error {
 public:
  using Error::Error;
};

}  // namespace demblind
