#pragma once

#include <stdexcept>
#include <string>

namespace almreg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions, bad parameters, malformed config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A function evaluated outside its domain (e.g. f(rho) with rho <= 1).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A claimed subgradient produced a Bregman distance below tolerance.
class InvalidSubgradient : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// K restricted to the support columns is (numerically) not injective.
class RestrictedInjectivityFailure : public Error {
 public:
  using Error::Error;
};

class GenerationFailure : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace almreg
