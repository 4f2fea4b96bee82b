#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssbreg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented precondition. `field()` names the offending input.
class ValidationError : public Error {
public:
  ValidationError(std::string field, const std::string &what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string &field() const noexcept { return field_; }

private:
  std::string field_;
};

class BoundsError : public Error {
public:
  using Error::Error;
};

// file format errors
class ParseError : public Error {
public:
  ParseError(std::string key, const std::string &what)
      : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string &key() const noexcept { return key_; }

private:
  std::string key_;
};

class TruncationError : public Error {
public:
  using Error::Error;
};

class SizeMismatchError : public Error {
public:
  using Error::Error;
};

class UnsupportedTypeError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// score curve files
class MonotonicityError : public Error {
public:
  using Error::Error;
};

class EmptyCurveError : public Error {
public:
  using Error::Error;
};

// numerics
class VolumeTooShortError : public Error {
public:
  using Error::Error;
};

class UndefinedCorrelationError : public Error {
public:
  using Error::Error;
};

class DegenerateScoreGradientError : public Error {
public:
  using Error::Error;
};

class NoFeasibleShiftError : public Error {
public:
  using Error::Error;
};

class NoFeasibleTranslationError : public Error {
public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
public:
  TrainingDivergedError(std::size_t iteration)
      : Error("non-finite loss at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

private:
  std::size_t iteration_;
};

} // namespace ssbreg
