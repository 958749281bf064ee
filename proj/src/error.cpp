#include "bioanon/error.hpp"

namespace bioanon {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::InvalidCount: return "InvalidCount";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::UnknownIdentity: return "UnknownIdentity";
    case ErrorKind::DegenerateSplit: return "DegenerateSplit";
    case ErrorKind::UnknownRegion: return "UnknownRegion";
    case ErrorKind::TooFewFrames: return "TooFewFrames";
    case ErrorKind::StripTooTall: return "StripTooTall";
    case ErrorKind::EvenKernel: return "EvenKernel";
    case ErrorKind::BackgroundTooSmall: return "BackgroundTooSmall";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::ModelNotFitted: return "ModelNotFitted";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::NTooLarge: return "NTooLarge";
    case ErrorKind::MissingMetadata: return "MissingMetadata";
    case ErrorKind::SingleIdentity: return "SingleIdentity";
    case ErrorKind::EmptyPredictions: return "EmptyPredictions";
    case ErrorKind::MixedCoordinates: return "MixedCoordinates";
    case ErrorKind::ExternalToolFailed: return "ExternalToolFailed";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace bioanon
