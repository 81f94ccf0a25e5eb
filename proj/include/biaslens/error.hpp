#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace biaslens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input: shape mismatch, empty sample, degenerate data.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted on-disk artifact. `offset` is the byte position
/// at which the problem was detected.
class FormatError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Checksum, Shape, Io };

  FormatError(Kind kind, std::uint64_t offset, const std::string& what)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

/// Bridge peer misbehaved or reported an error frame.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Steering loop hit its step cap without reaching the threshold.
class SteeringError : public Error {
 public:
  SteeringError(int layer, double confidence, const std::string& what)
      : Error(what), layer_(layer), confidence_(confidence) {}
  int layer() const noexcept { return layer_; }
  double confidence() const noexcept { return confidence_; }

 private:
  int layer_;
  double confidence_;
};

/// Artifacts built from different models or encoders were mixed.
class ProvenanceError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration; `field` is a JSON-pointer-like path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A pipeline stage failed; wraps the underlying message with stage context.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string concept_name, const std::string& what)
      : Error("[" + stage + (concept_name.empty() ? "" : ":" + concept_name) + "] " + what),
        stage_(std::move(stage)),
        concept_(std::move(concept_name)) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& concept_name() const noexcept { return concept_; }

 private:
  std::string stage_;
  std::string concept_;
};

}  // namespace biaslens
