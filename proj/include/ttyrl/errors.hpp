#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ttyrl {

enum class ErrorKind {
  UnknownTask,
  MalformedId,
  ValidationFailed,
  IoError,
  BadMagic,
  VersionMismatch,
  CorruptIndex,
  IndexOutOfRange,
  DecompressFailed,
  EmptyStream,
  NonMonotoneTermination,
  TargetExceedsPopulation,
  InsufficientMemory,
  EmptyDataset,
  AllEpisodesTooShort,
  DoubleClose,
  UseAfterClose,
  NonFiniteLoss,
  AdapterFailure,
  SteppedAfterDone,
  MismatchedTasks,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ttyrl
