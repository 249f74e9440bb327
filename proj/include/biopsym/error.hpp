#pragma once

#include <stdexcept>
#include <string>

namespace biopsym {

/// Base of every error raised by the library. Catch this to handle any of them.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BIOPSYM_DEFINE_ERROR(Name)            \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

BIOPSYM_DEFINE_ERROR(InvalidParams);
BIOPSYM_DEFINE_ERROR(FormatError);
BIOPSYM_DEFINE_ERROR(IoError);
BIOPSYM_DEFINE_ERROR(DegenerateSegment);
BIOPSYM_DEFINE_ERROR(OutsideGland);
BIOPSYM_DEFINE_ERROR(PoseOutOfRange);
BIOPSYM_DEFINE_ERROR(DepthOutOfRange);
BIOPSYM_DEFINE_ERROR(BadResolution);
BIOPSYM_DEFINE_ERROR(EvidenceMismatch);
BIOPSYM_DEFINE_ERROR(InfeasibleTarget);
BIOPSYM_DEFINE_ERROR(NotFound);
BIOPSYM_DEFINE_ERROR(SessionClosed);

#undef BIOPSYM_DEFINE_ERROR

}  // namespace biopsym
