#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cxdi/iterative.hpp"
#include "cxdi/optimize.hpp"
#include "cxdi/report.hpp"

namespace cxdi {

struct Alignment {
    ComplexVolume aligned;
    AlignmentTransform transform;
    double amplitude_error = 0.0;  // rel_l2 of |aligned| vs |reference|
    double complex_error = 0.0;    // rel_l2 of aligned vs reference
};

/// Undoes twinning, integer translation and global phase so `candidate` can be scored against
/// `reference`. The identity is always among the hypotheses, so the amplitude error never grows.
Alignment align_to_reference(const ComplexVolume& candidate, const ComplexVolume& reference);

/// Applies the inverse of `t` to `candidate`.
ComplexVolume apply_alignment(const ComplexVolume& candidate, const AlignmentTransform& t);

/// rel_l2 between |candidate| and |reference| after alignment.
double aligned_amplitude_error(const ComplexVolume& candidate, const ComplexVolume& reference);

enum class EnsembleMethod { iterative, refine_random, refine_transfer };

std::string_view to_string(EnsembleMethod m) noexcept;
EnsembleMethod parse_method(std::string_view s);

struct EnsembleOptions {
    EnsembleMethod method = EnsembleMethod::iterative;
    int runs = 20;
    std::uint64_t base_seed = 0;
    std::uint64_t seed_stride = 1;  // run i uses base_seed + i * stride
    int jobs = 1;
    IterativeSchedule iterative;
    RefineConfig refine;  // init is replaced per run for refine-random
};

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<long> counts;
};

/// 30 uniform bins over mean +- 4 sd. A zero spread collapses every value into the middle bin.
Histogram fixed_histogram(const std::vector<double>& values, double mean, double sd);

struct MetricSummary {
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation (n - 1)
    Histogram histogram;
};

MetricSummary summarize(const std::vector<double>& values);

struct EnsembleReport {
    std::string method;
    std::vector<RunReport> runs;
    long excluded = 0;
    MetricSummary chi2;
    MetricSummary modified_rp;

    std::vector<double> chi2_values() const;
    std::vector<double> rp_values() const;
    std::string to_json() const;
    std::string histogram_csv() const;
};

/// One independent reconstruction of `pattern`; never throws, failures land in the report.
RunReport single_run(const DiffractionPattern& pattern, const EnsembleOptions& opts, std::uint64_t seed);

EnsembleReport ensemble_run(const DiffractionPattern& pattern, const EnsembleOptions& opts);

/// Report fields for a finished refinement.
RunReport refine_report(const RefineResult& r, const DiffractionPattern& pattern, std::string method,
                        std::uint64_t seed);

/// |FSW_a - FSW_b| / max(FSW_a, tiny) per shell.
std::vector<double> compare_fsw(const RealVolume& a, const RealVolume& b, int n_shells);
std::vector<double> compare_fsw(const DiffractionPattern& a, const DiffractionPattern& b, int n_shells);
std::string fsw_comparison_csv(const FswProfile& a, const FswProfile& b, const std::vector<double>& rel);

/// Rescales I = amplitude^2 to total `photon_budget`, draws Poisson counts, and maps sqrt(counts) back.
DiffractionPattern add_poisson_noise(const DiffractionPattern& pattern, double photon_budget, std::uint64_t seed);

}  // namespace cxdi
