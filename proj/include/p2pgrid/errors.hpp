#pragma once

#include <stdexcept>
#include <string>

namespace p2pgrid {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Cycle, disconnected node, or bad node reference in the line table.
class TopologyError : public Error {
 public:
  using Error::Error;
};

/// Inverted voltage or flow dead band.
class LimitError : public Error {
 public:
  using Error::Error;
};

/// Line with r = x = 0.
class SingularBranchError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_mismatch, int iterations)
      : Error(what), last_mismatch_(last_mismatch), iterations_(iterations) {}
  double last_mismatch() const { return last_mismatch_; }
  int iterations() const { return iterations_; }

 private:
  double last_mismatch_;
  int iterations_;
};

/// Singular or ill-conditioned linear system.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double rcond) : Error(what), rcond_(rcond) {}
  double reciprocal_condition() const { return rcond_; }

 private:
  double rcond_;
};

/// Value outside a peer's admissible volume range.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Cost allocation needs a sensitivity that is undefined (zero-flow line).
class AllocationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what) : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace p2pgrid
