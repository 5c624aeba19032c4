#pragma once

#include <stdexcept>
#include <string>

namespace nerfinv {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// log_se3 refuses to pick a branch for rotations within 1e-6 of pi.
class AmbiguousBranch : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite loss or gradient during an iterative procedure.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::string path)
      : std::runtime_error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Error raised inside a multi-stage pipeline, tagged with the failing stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace nerfinv
