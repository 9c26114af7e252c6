#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace expert {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration / input problems (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  using Error::Error;
};

// Gateway errors.
class TransportError : public Error {
 public:
  using Error::Error;
};

class BackendRefused : public Error {
 public:
  BackendRefused(const std::string& what, int status, bool retryable)
      : Error(what), status_(status), retryable_(retryable) {}
  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

// Pipeline errors.
class ExtractionFailed : public Error {
 public:
  using Error::Error;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

// Scoring errors.
class MissingJudgment : public Error {
 public:
  using Error::Error;
};

class ScoringContractError : public Error {
 public:
  using Error::Error;
};

class UnparseableScore : public Error {
 public:
  using Error::Error;
};

class AllSamplesUnparseable : public Error {
 public:
  using Error::Error;
};

// Harness errors.
class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line_no, const std::string& reason)
      : Error("line " + std::to_string(line_no) + ": " + reason), line_no_(line_no) {}
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class DuplicateId : public Error {
 public:
  using Error::Error;
};

class MissingLabel : public Error {
 public:
  using Error::Error;
};

class EmptyBucket : public Error {
 public:
  using Error::Error;
};

}  // namespace expert
