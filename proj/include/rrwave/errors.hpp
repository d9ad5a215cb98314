#pragma once

#include <stdexcept>
#include <string>

namespace rrwave {

enum class Err {
  MissingFile,
  MalformedRow,
  NonMonotonicTimestamps,
  EmptySignal,
  WindowLongerThanSignal,
  InvalidSpec,
  EmptyWindow,
  ShapeMismatch,
  DisconnectedGraph,
  InvalidConfig,
  NonFiniteActivation,
  BadMagic,
  VersionUnsupported,
  ChecksumMismatch,
  ConfigMismatch,
  EmptySplit,
  NonFiniteLoss,
  LengthMismatch,
  Empty,
  TooFewSubjects,
  InvalidRubric,
  UnknownSubcommand,
  ConflictingFlags,
  Precondition,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::MissingFile: return "MissingFile";
    case Err::MalformedRow: return "MalformedRow";
    case Err::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case Err::EmptySignal: return "EmptySignal";
    case Err::WindowLongerThanSignal: return "WindowLongerThanSignal";
    case Err::InvalidSpec: return "InvalidSpec";
    case Err::EmptyWindow: return "EmptyWindow";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::DisconnectedGraph: return "DisconnectedGraph";
    case Err::InvalidConfig: return "InvalidConfig";
    case Err::NonFiniteActivation: return "NonFiniteActivation";
    case Err::BadMagic: return "BadMagic";
    case Err::VersionUnsupported: return "VersionUnsupported";
    case Err::ChecksumMismatch: return "ChecksumMismatch";
    case Err::ConfigMismatch: return "ConfigMismatch";
    case Err::EmptySplit: return "EmptySplit";
    case Err::NonFiniteLoss: return "NonFiniteLoss";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::Empty: return "Empty";
    case Err::TooFewSubjects: return "TooFewSubjects";
    case Err::InvalidRubric: return "InvalidRubric";
    case Err::UnknownSubcommand: return "UnknownSubcommand";
    case Err::ConflictingFlags: return "ConflictingFlags";
    case Err::Precondition: return "Precondition";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void raise(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, Err code, const std::string& msg) {
  if (!ok) raise(code, msg);
}

}  // namespace rrwave
