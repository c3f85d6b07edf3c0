#pragma once

#include <stdexcept>
#include <string>

namespace memtier {

enum class ErrorKind { validation, not_found, storage, external_service };

// Base for all library errors. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& what) : Error(ErrorKind::not_found, what) {}
};

class StorageError : public Error {
 public:
  explicit StorageError(const std::string& what) : Error(ErrorKind::storage, what) {}
};

class ExternalServiceError : public Error {
 public:
  explicit ExternalServiceError(const std::string& what)
      : Error(ErrorKind::external_service, what) {}
};

}  // namespace memtier
