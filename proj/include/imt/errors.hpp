#pragma once

#include <stdexcept>
#include <string>

namespace imt {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed data, invalid parameters, non-identifiable designs.
class InputError : public Error {
 public:
  using Error::Error;
};

/// The data were fine but an estimator failed (divergence, singular system).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace imt
