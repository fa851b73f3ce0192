#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace amlhp {

enum class ErrorKind {
  FrameTooShort,
  UnsupportedProtocol,
  UnsupportedLinkType,
  BadCapture,
  UnreadableFile,
  NoMatchingRule,
  ClassTooSmall,
  InvalidSpec,
  InvalidConfig,
  BadMagic,
  VersionMismatch,
  TruncatedRecord,
  ShapeMismatch,
  LabelOutOfRange,
  InputOutOfRange,
  EmptySplit,
  DivergedLoss,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace amlhp
