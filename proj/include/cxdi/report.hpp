#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cxdi/metrics.hpp"

namespace cxdi {

/// Trivial ambiguities of the diffraction modulus. With T the conjugate inversion when `twin` is
/// set (identity otherwise), T(candidate) ~ e^{i phase_offset} * reference displaced by `translation`.
struct AlignmentTransform {
    int translation[3] = {0, 0, 0};
    bool twin = false;
    double phase_offset = 0.0;
};

struct RunReport {
    std::string method;
    std::uint64_t seed = 0;
    double chi2 = 0.0;
    double modified_rp = 0.0;  // 1 - L3 between predicted and measured amplitudes
    std::vector<std::pair<long, double>> loss_trace;
    FswProfile fsw;
    AlignmentTransform alignment;
    bool failed = false;
    std::string failure;

    std::string to_json() const;
};

}  // namespace cxdi
