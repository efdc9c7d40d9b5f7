#include "cxdi/error.hpp"

namespace cxdi {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::InvalidGrid: return "InvalidGrid";
        case Errc::InvalidArgument: return "InvalidArgument";
        case Errc::TargetTooSmall: return "TargetTooSmall";
        case Errc::BadMagic: return "BadMagic";
        case Errc::HeaderParse: return "HeaderParse";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::TruncatedPayload: return "TruncatedPayload";
        case Errc::IoFailure: return "IoFailure";
        case Errc::ParamsExceedGrid: return "ParamsExceedGrid";
        case Errc::DegenerateSupport: return "DegenerateSupport";
        case Errc::NonUnitQuaternion: return "NonUnitQuaternion";
        case Errc::OversamplingViolation: return "OversamplingViolation";
        case Errc::ZeroReference: return "ZeroReference";
        case Errc::ConstantInput: return "ConstantInput";
        case Errc::EmptySupport: return "EmptySupport";
        case Errc::NonFiniteState: return "NonFiniteState";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::MissingTape: return "MissingTape";
        case Errc::OddExtent: return "OddExtent";
        case Errc::EmptyDataset: return "EmptyDataset";
        case Errc::NonFiniteLoss: return "NonFiniteLoss";
    }
    return "Unknown";
}

bool is_io_error(Errc code) noexcept {
    switch (code) {
        case Errc::BadMagic:
        case Errc::HeaderParse:
        case Errc::DimensionMismatch:
        case Errc::TruncatedPayload:
        case Errc::IoFailure:
            return true;
        default:
            return false;
    }
}

}  // namespace cxdi
