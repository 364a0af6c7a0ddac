#pragma once

#include <stdexcept>
#include <string>

namespace gfc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GFC_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

GFC_DEFINE_ERROR(UnsupportedDerivativeOrder);
GFC_DEFINE_ERROR(InvalidArgument);
GFC_DEFINE_ERROR(GridTooLarge);
GFC_DEFINE_ERROR(CubeOutOfExtent);
GFC_DEFINE_ERROR(DomainNotCovered);
GFC_DEFINE_ERROR(UnsupportedDimension);
GFC_DEFINE_ERROR(MissingDerivatives);
GFC_DEFINE_ERROR(GridMismatch);
GFC_DEFINE_ERROR(WindowTooSmall);
GFC_DEFINE_ERROR(NonSymmetricInput);
GFC_DEFINE_ERROR(SingularConditioningBlock);
GFC_DEFINE_ERROR(OutsideRegionD);
GFC_DEFINE_ERROR(ConfigError);
GFC_DEFINE_ERROR(IoError);

#undef GFC_DEFINE_ERROR

}  // namespace gfc
