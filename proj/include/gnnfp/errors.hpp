#pragma once

#include <stdexcept>
#include <string>

namespace gnnfp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GNNFP_DEFINE_ERROR(Name)                      \
  class Name : public Error {                         \
   public:                                            \
    explicit Name(const std::string& what)            \
        : Error(std::string(#Name ": ") + what) {}    \
  }

// numerics
GNNFP_DEFINE_ERROR(NotPositiveDefinite);
GNNFP_DEFINE_ERROR(NoConvergence);
GNNFP_DEFINE_ERROR(NotHermitian);
GNNFP_DEFINE_ERROR(DimensionMismatch);
GNNFP_DEFINE_ERROR(NumericalFailure);

// autodiff
GNNFP_DEFINE_ERROR(ShapeMismatch);
GNNFP_DEFINE_ERROR(NonScalarLoss);
GNNFP_DEFINE_ERROR(DegenerateBatch);

// scenario / files
GNNFP_DEFINE_ERROR(InvalidConfig);
GNNFP_DEFINE_ERROR(IoError);
GNNFP_DEFINE_ERROR(VersionMismatch);
GNNFP_DEFINE_ERROR(CorruptFile);

// training
GNNFP_DEFINE_ERROR(DivergedLoss);

#undef GNNFP_DEFINE_ERROR

}  // namespace gnnfp
