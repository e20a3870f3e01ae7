#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bev {

enum class ErrorKind {
  InvalidIntrinsics,
  InvalidExtrinsics,
  InvalidFrame,
  DegenerateHomography,
  InvalidPoint,
  Palette,
  UnsupportedFov,
  Stitch,
  Configuration,
  Generation,
  Decode,
  Shape,
  DegenerateTransform,
  Manifest,
  Input,
  Metric,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and tests)
/// can branch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidIntrinsics: return "invalid intrinsics";
    case ErrorKind::InvalidExtrinsics: return "invalid extrinsics";
    case ErrorKind::InvalidFrame: return "invalid frame";
    case ErrorKind::DegenerateHomography: return "degenerate homography";
    case ErrorKind::InvalidPoint: return "invalid point";
    case ErrorKind::Palette: return "palette error";
    case ErrorKind::UnsupportedFov: return "unsupported fov";
    case ErrorKind::Stitch: return "stitch error";
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::Generation: return "generation error";
    case ErrorKind::Decode: return "decode error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::DegenerateTransform: return "degenerate transform";
    case ErrorKind::Manifest: return "manifest error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Metric: return "metric error";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

}  // namespace bev
