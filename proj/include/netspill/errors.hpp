#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace netspill {

// Base of every error raised by the library. `kind()` is the stable,
// machine-readable tag written into CLI error records.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data_error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& msg)
      : Error(file + ":" + std::to_string(line) + ": " + msg),
        file_(std::move(file)),
        line_(line) {}
  const char* kind() const noexcept override { return "parse_error"; }
  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

class MissingColumnError : public Error {
 public:
  explicit MissingColumnError(std::string column)
      : Error("missing column '" + column + "'"), column_(std::move(column)) {}
  const char* kind() const noexcept override { return "missing_column"; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class MissingDateError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "missing_date"; }
};

class RankDeficiencyError : public Error {
 public:
  explicit RankDeficiencyError(std::vector<std::string> columns);
  const char* kind() const noexcept override { return "rank_deficient"; }
  const std::vector<std::string>& columns() const noexcept { return columns_; }

 private:
  std::vector<std::string> columns_;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "convergence"; }
};

class PositivityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "positivity"; }
};

}  // namespace netspill
