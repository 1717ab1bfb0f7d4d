#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

// Base of every error the library raises. `kind()` is a stable short name used
// by the CLI and the HTTP layer when reporting failures.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define STEERLAB_DEFINE_ERROR(Name)                                             \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& what) : Error(#Name, what) {}          \
    }

STEERLAB_DEFINE_ERROR(ParseError);
STEERLAB_DEFINE_ERROR(IoError);
STEERLAB_DEFINE_ERROR(InvalidVocabulary);
STEERLAB_DEFINE_ERROR(OutOfRangeId);
STEERLAB_DEFINE_ERROR(ShapeMismatch);
STEERLAB_DEFINE_ERROR(MissingTensor);
STEERLAB_DEFINE_ERROR(InvalidConfig);
STEERLAB_DEFINE_ERROR(ContextOverflow);
STEERLAB_DEFINE_ERROR(InvalidAddress);
STEERLAB_DEFINE_ERROR(DimensionMismatch);
STEERLAB_DEFINE_ERROR(CannotAlign);
STEERLAB_DEFINE_ERROR(MissingVector);
STEERLAB_DEFINE_ERROR(NameCollision);
STEERLAB_DEFINE_ERROR(InvalidArgument);
// Request-level: unknown resource, model at its concurrency limit.
STEERLAB_DEFINE_ERROR(NotFound);
STEERLAB_DEFINE_ERROR(Busy);

#undef STEERLAB_DEFINE_ERROR

}  // namespace steerlab
