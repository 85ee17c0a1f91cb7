#pragma once

#include <stdexcept>
#include <string>

namespace vvad {

/// Base class of every error raised by the library. Validation errors map to
/// CLI exit code 1, everything else to exit code 2.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual bool is_validation() const noexcept { return false; }
};

class ValidationError : public Error {
public:
  using Error::Error;
  bool is_validation() const noexcept override { return true; }
};

#define VVAD_DEFINE_ERROR(Name, Base)                                        \
  class Name : public Base {                                                 \
  public:                                                                    \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {}      \
  };

// Geometry
VVAD_DEFINE_ERROR(DegenerateFace, Error)
VVAD_DEFINE_ERROR(DegenerateConfiguration, Error)
// Audio and pipeline
VVAD_DEFINE_ERROR(EmptyAudio, ValidationError)
VVAD_DEFINE_ERROR(TooShortTrack, ValidationError)
// Tensors and models
VVAD_DEFINE_ERROR(ShapeMismatch, ValidationError)
VVAD_DEFINE_ERROR(BackboneUnavailable, Error)
VVAD_DEFINE_ERROR(EmptyInput, ValidationError)
VVAD_DEFINE_ERROR(SingleClassDataset, ValidationError)
// Evaluation
VVAD_DEFINE_ERROR(EmptyClass, ValidationError)
VVAD_DEFINE_ERROR(TooFewSamples, ValidationError)
VVAD_DEFINE_ERROR(ProvenanceViolation, ValidationError)
// I/O
VVAD_DEFINE_ERROR(FormatError, ValidationError)
VVAD_DEFINE_ERROR(IoError, Error)

#undef VVAD_DEFINE_ERROR

}  // namespace vvad
