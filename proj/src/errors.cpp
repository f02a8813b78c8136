#include "ttyrl/errors.hpp"

namespace ttyrl {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownTask: return "UnknownTask";
    case ErrorKind::MalformedId: return "MalformedId";
    case ErrorKind::ValidationFailed: return "ValidationFailed";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptIndex: return "CorruptIndex";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DecompressFailed: return "DecompressFailed";
    case ErrorKind::EmptyStream: return "EmptyStream";
    case ErrorKind::NonMonotoneTermination: return "NonMonotoneTermination";
    case ErrorKind::TargetExceedsPopulation: return "TargetExceedsPopulation";
    case ErrorKind::InsufficientMemory: return "InsufficientMemory";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::AllEpisodesTooShort: return "AllEpisodesTooShort";
    case ErrorKind::DoubleClose: return "DoubleClose";
    case ErrorKind::UseAfterClose: return "UseAfterClose";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::AdapterFailure: return "AdapterFailure";
    case ErrorKind::SteppedAfterDone: return "SteppedAfterDone";
    case ErrorKind::MismatchedTasks: return "MismatchedTasks";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

}  // namespace ttyrl
