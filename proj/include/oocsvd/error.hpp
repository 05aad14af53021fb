#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace oocsvd {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
  public:
    using Error::Error;
};

class ParseError : public Error {
  public:
    enum class Kind { malformed, non_numeric, out_of_bounds, count_mismatch };

    ParseError(std::string what, std::uint64_t line, Kind kind = Kind::malformed)
        : Error("line " + std::to_string(line) + ": " + what), line_(line), kind_(kind) {}
    std::uint64_t line() const noexcept { return line_; }
    Kind kind() const noexcept { return kind_; }

  private:
    std::uint64_t line_;
    Kind kind_;
};

class FormatError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    IoError(const std::string& what, std::string path) : Error(what + ": " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

  private:
    std::string path_;
};

// Block file was never written (or its file vanished).
class BlockAbsent : public IoError {
  public:
    using IoError::IoError;
};

// Block file exists but its header or checksum does not verify.
class BlockCorrupt : public IoError {
  public:
    using IoError::IoError;
};

class BudgetError : public Error {
  public:
    using Error::Error;
};

class ConvergenceError : public Error {
  public:
    ConvergenceError(const std::string& what, double residual) : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

  private:
    double residual_;
};

class NoPlanError : public Error {
  public:
    using Error::Error;
};

class ConfigMismatch : public Error {
  public:
    using Error::Error;
};

/// A stop was requested between steps; the workdir is resumable.
class Interrupted : public Error {
  public:
    using Error::Error;
};

}  // namespace oocsvd
