#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skillknn {

enum class ErrorKind {
    Parse,
    Validation,
    Io,
    Input,
    Config,
    Data,
    Shape,
    DegenerateEmbedding,
    DegenerateMean,
    Transport,
    EmptySkill,
    EmptyCandidateSet,
    Budget,
    Join,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` lets callers branch
/// without a class per failure mode.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
          kind_(kind), detail_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

    /// Same kind, message prefixed with extra context.
    Error with_context(const std::string& context) const {
        return Error(kind_, context + ": " + detail_);
    }

private:
    ErrorKind kind_;
    std::string detail_;
};

}  // namespace skillknn
