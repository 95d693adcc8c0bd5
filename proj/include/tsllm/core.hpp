#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tsllm {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Number of load channels carried through the pipeline.
inline constexpr int kChannels = 3;

/// Channel order inside every window: x(1)=solar, x(2)=high-power, x(3)=other appliances.
enum class Channel : int { Solar = 0, HighPower = 1, Appliance = 2 };

inline const char* channel_name(int c) {
  switch (c) {
    case 0: return "sp";
    case 1: return "hp";
    case 2: return "ap";
    default: return "?";
  }
}

// Error hierarchy. The CLI maps these onto exit codes (config 1, data 2, runtime 3).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Raised for malformed CSV records; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line, const std::string& source = {})
      : DataError((source.empty() ? std::string() : source + ":") + "line " + std::to_string(line) + ": " + what),
        detail_(what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t line_;
};

class InsufficientDataError : public DataError {
 public:
  InsufficientDataError(const std::string& what, std::size_t required)
      : DataError(what + " (minimum length " + std::to_string(required) + ")"), required_(required) {}
  std::size_t required() const noexcept { return required_; }

 private:
  std::size_t required_;
};

class UnrecoverableChannelError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ZeroNormError : public NumericError {
 public:
  using NumericError::NumericError;
};

class NonInvertibleScaleError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ContextLengthError : public Error {
 public:
  ContextLengthError(Index length, Index max_positions)
      : Error("prompt length " + std::to_string(length) + " exceeds max_positions " +
              std::to_string(max_positions)),
        max_positions_(max_positions) {}
  Index max_positions() const noexcept { return max_positions_; }

 private:
  Index max_positions_;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class EmptyEvaluationError : public DataError {
 public:
  using DataError::DataError;
};

namespace detail {

inline std::string shape_str(Index r, Index c) {
  return "(" + std::to_string(r) + "," + std::to_string(c) + ")";
}

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail

}  // namespace tsllm
