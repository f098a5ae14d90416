#ifndef PRICELAB_ERROR_HPP_
#define PRICELAB_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace pricelab {

// Base class for every error raised by the library. Callers that only need
// to report a failure can catch this; the CLI maps it to a nonzero exit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A forward pass produced NaN or Inf, or a loss became non-finite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace pricelab

#endif  // PRICELAB_ERROR_HPP_
