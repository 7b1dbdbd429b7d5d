#pragma once

#include <stdexcept>
#include <string>

namespace dorl {

// Base for every error the library raises on bad input or failed invariants.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (CSV rows, JSON documents).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input that parsed but violates a documented bound or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Numerical failure during training (NaN / inf loss).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A self-check inside the library failed; indicates a bug, not bad input.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dorl
