#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace alignmamba {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN/Inf from finite inputs.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string op, const std::string& what)
      : Error(what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

// Malformed binary or text input; offset is the byte position of the fault.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Sinkhorn failed to reach the marginal tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(double violation, const std::string& what)
      : Error(what), violation_(violation) {}
  double violation() const noexcept { return violation_; }

 private:
  double violation_;
};

// Invalid configuration value or unknown key; key names the offender.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace alignmamba
