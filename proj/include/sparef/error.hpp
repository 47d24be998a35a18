#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sparef {

// Error categories surfaced by the engine. The CLI maps the category to a
// machine-readable error line and a nonzero exit code.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}
    const std::string& category() const { return category_; }

private:
    std::string category_;
};

#define SPAREF_ERROR_TYPE(NAME, CATEGORY)                            \
    class NAME : public Error {                                      \
    public:                                                          \
        explicit NAME(const std::string& msg) : Error(CATEGORY, msg) {} \
    };

SPAREF_ERROR_TYPE(FormatError, "format")
SPAREF_ERROR_TYPE(ArgumentError, "argument")
SPAREF_ERROR_TYPE(ShapeError, "shape")
SPAREF_ERROR_TYPE(NumericError, "numeric")
SPAREF_ERROR_TYPE(StateError, "state")
SPAREF_ERROR_TYPE(BoundsError, "bounds")
SPAREF_ERROR_TYPE(AlignmentError, "alignment")
SPAREF_ERROR_TYPE(ConfigError, "config")
SPAREF_ERROR_TYPE(CheckpointError, "checkpoint")
SPAREF_ERROR_TYPE(TrainingError, "training")
SPAREF_ERROR_TYPE(IoError, "io")

#undef SPAREF_ERROR_TYPE

}  // namespace sparef
