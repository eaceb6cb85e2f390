#pragma once

#include <stdexcept>
#include <string>

namespace modwt {

// Failure category; the CLI maps these onto exit codes 1/2/3.
enum class ErrorKind { input, statistical, abort };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class StatisticalError : public Error {
 public:
  explicit StatisticalError(const std::string& what) : Error(ErrorKind::statistical, what) {}
};

class SeparationError : public StatisticalError {
 public:
  explicit SeparationError(const std::string& what) : StatisticalError(what) {}
};

class ConvergenceError : public StatisticalError {
 public:
  explicit ConvergenceError(const std::string& what) : StatisticalError(what) {}
};

class RankDeficiencyError : public StatisticalError {
 public:
  explicit RankDeficiencyError(const std::string& what) : StatisticalError(what) {}
};

// Raised when a strict-overlap or strict-balance gate trips.
class AbortError : public Error {
 public:
  explicit AbortError(const std::string& what) : Error(ErrorKind::abort, what) {}
};

}  // namespace modwt
