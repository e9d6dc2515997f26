#pragma once

#include <stdexcept>
#include <string>

namespace moslam {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidDepthError : Error {
  using Error::Error;
};
struct BehindCameraError : Error {
  using Error::Error;
};
struct SingularSystemError : Error {
  using Error::Error;
};
struct TrackingLostError : Error {
  using Error::Error;
};
struct CameraLostError : Error {
  using Error::Error;
};
struct PoseMissingError : Error {
  using Error::Error;
};
struct EmptyModelError : Error {
  using Error::Error;
};
struct LabelExhaustedError : Error {
  using Error::Error;
};
struct QueueClosedError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct NoOverlapError : Error {
  using Error::Error;
};

}  // namespace moslam
