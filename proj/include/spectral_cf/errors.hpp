#pragma once

#include <stdexcept>
#include <string>

namespace scf {

// All library failures derive from scf::Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise malformed input values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A scalar parameter outside its admissible range (bandwidth, weight, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NotPsdError : public Error {
 public:
  using Error::Error;
};

class UnsupportedPenaltyError : public Error {
 public:
  using Error::Error;
};

// Objective became NaN/inf during a solve.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class SizeCapError : public Error {
 public:
  using Error::Error;
};

// Input file problems; the message carries file name and line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A grid cell or fold failed; the message names the cell and fold.
class ExperimentError : public Error {
 public:
  using Error::Error;
};

}  // namespace scf
