#pragma once

#include <stdexcept>
#include <string>

namespace bfuse {

/// Base of every error thrown by the library. The category maps onto the
/// CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { kConfig = 2, kStore = 3, kNumerical = 4 };

  Error(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  Kind kind_;
};

/// Invalid arguments, inconsistent configuration, shape mismatches.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Kind::kConfig, what) {}
};

/// Missing files, malformed manifests, corrupt or inconsistent store data.
class StoreError : public Error {
 public:
  explicit StoreError(const std::string& what) : Error(Kind::kStore, what) {}
};

/// Non-finite losses, zero vectors where a direction is required.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(Kind::kNumerical, what) {}
};

}  // namespace bfuse
