#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cxdi {

enum class Errc {
    InvalidGrid,
    InvalidArgument,
    TargetTooSmall,
    BadMagic,
    HeaderParse,
    DimensionMismatch,
    TruncatedPayload,
    IoFailure,
    ParamsExceedGrid,
    DegenerateSupport,
    NonUnitQuaternion,
    OversamplingViolation,
    ZeroReference,
    ConstantInput,
    EmptySupport,
    NonFiniteState,
    ShapeMismatch,
    MissingTape,
    OddExtent,
    EmptyDataset,
    NonFiniteLoss,
};

std::string_view to_string(Errc code) noexcept;

// True for failures that originate from file/format problems rather than numerics.
bool is_io_error(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace cxdi
