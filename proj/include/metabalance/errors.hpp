#pragma once

#include <stdexcept>
#include <string>

namespace metabalance {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Incompatible matrix or parameter shapes.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A function under differentiation produced a non-finite value.
class EvaluationError : public Error {
public:
  using Error::Error;
};

/// A class has zero instances where every class must be present.
class MissingClassError : public Error {
public:
  MissingClassError(std::size_t class_id, const std::string &where)
      : Error("class " + std::to_string(class_id) + " has no instances in " +
              where),
        class_id_(class_id) {}

  std::size_t class_id() const noexcept { return class_id_; }

private:
  std::size_t class_id_;
};

class StratificationError : public Error {
public:
  StratificationError(std::size_t class_id, const std::string &msg)
      : Error("cannot stratify class " + std::to_string(class_id) + ": " + msg),
        class_id_(class_id) {}

  std::size_t class_id() const noexcept { return class_id_; }

private:
  std::size_t class_id_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

class GenerationError : public Error {
public:
  using Error::Error;
};

/// Malformed, truncated or tampered on-disk data.
class FormatError : public Error {
public:
  using Error::Error;
};

class ArgumentError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace metabalance
