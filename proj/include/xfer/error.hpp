#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xfer {

enum class ErrorKind {
  InvalidShape,
  ShapeError,
  InvalidArgument,
  NonFinite,
  EmptyLoss,
  InvalidId,
  InvalidConfig,
  SequenceTooLong,
  UnsupportedVersion,
  CorruptCheckpoint,
  ParseError,
  EmptyCorpus,
  TooSmallToSplit,
  EmptyCommand,
  ReferenceInvalid,
  TrainingDiverged,
  PhaseError,
  FreezeViolation,
  IoError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidShape: return "InvalidShape";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyLoss: return "EmptyLoss";
    case ErrorKind::InvalidId: return "InvalidId";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::TooSmallToSplit: return "TooSmallToSplit";
    case ErrorKind::EmptyCommand: return "EmptyCommand";
    case ErrorKind::ReferenceInvalid: return "ReferenceInvalid";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::PhaseError: return "PhaseError";
    case ErrorKind::FreezeViolation: return "FreezeViolation";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

// Every failure in the library is reported as an Error carrying its kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace xfer
