#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ebmpose {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define EBMPOSE_ERROR(Name)                \
  struct Name : Error {                    \
    using Error::Error;                    \
  }

EBMPOSE_ERROR(DegenerateRotation);
EBMPOSE_ERROR(NotARotation);
EBMPOSE_ERROR(DegenerateMean);
EBMPOSE_ERROR(ConfigError);
EBMPOSE_ERROR(BadSpec);
EBMPOSE_ERROR(RejectionBudgetExceeded);
EBMPOSE_ERROR(DomainError);
EBMPOSE_ERROR(NonFiniteLoss);
EBMPOSE_ERROR(StepSizeUnderflow);
EBMPOSE_ERROR(ShapeMismatch);
EBMPOSE_ERROR(VersionMismatch);
EBMPOSE_ERROR(CorruptCheckpoint);
EBMPOSE_ERROR(RefinementFailed);
EBMPOSE_ERROR(NoCandidates);
EBMPOSE_ERROR(DegenerateAlignment);

#undef EBMPOSE_ERROR

/// Malformed text input; carries the 1-based line number.
struct ParseError : Error {
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

}  // namespace ebmpose
