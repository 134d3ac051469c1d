#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tabtext {

enum class ErrorKind {
    Io,
    MalformedRecord,
    DuplicateId,
    EmptyHeader,
    RowLengthMismatch,
    EmptyPassage,
    DanglingTable,
    DanglingPassage,
    IndexOutOfRange,
    ReservedMarker,
    MissingAnswer,
    InvalidArgument,
    BudgetTooSmall,
    DimensionMismatch,
    EmptyInput,
    NonFiniteLoss,
    Exhausted,
    Format,
    ConfigConflict,
    ApproximateRecall,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a classification so that
/// callers (and the CLI exit path) can tell validation problems apart.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), m_kind(kind)
    {}

    ErrorKind kind() const noexcept { return m_kind; }

  private:
    ErrorKind m_kind;
};

}  // namespace tabtext
