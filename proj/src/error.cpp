#include "amlhp/error.hpp"
#include "amlhp/tensor.hpp"

namespace amlhp {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::FrameTooShort: return "FrameTooShort";
    case ErrorKind::UnsupportedProtocol: return "UnsupportedProtocol";
    case ErrorKind::UnsupportedLinkType: return "UnsupportedLinkType";
    case ErrorKind::BadCapture: return "BadCapture";
    case ErrorKind::UnreadableFile: return "UnreadableFile";
    case ErrorKind::NoMatchingRule: return "NoMatchingRule";
    case ErrorKind::ClassTooSmall: return "ClassTooSmall";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::TruncatedRecord: return "TruncatedRecord";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::InputOutOfRange: return "InputOutOfRange";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
  }
  return "Unknown";
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace amlhp
