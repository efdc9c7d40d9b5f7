#pragma once

#include <cstdint>
#include <string>

#include "cxdi/report.hpp"
#include "cxdi/volume.hpp"

namespace cxdi {

struct SupportMask {
    Grid3 grid;
    std::vector<std::uint8_t> mask;

    static SupportMask centered_box(const Grid3& grid, const Grid3& box);
    std::size_t count() const;
};

struct ReconstructionState {
    ComplexVolume estimate;
    SupportMask support;
    long iteration = 0;
    std::vector<std::pair<long, double>> error_trace;
};

/// The conventional ER/HIO/shrink-wrap recipe. Defaults are the published 2000-iteration schedule.
struct IterativeSchedule {
    long total_iters = 2000;
    long er_head = 50;
    long block_len = 50;
    double hio_beta = 0.9;
    long shrinkwrap_start = 100;
    long shrinkwrap_every = 10;
    long er_tail = 100;
    double sigma0 = 3.0;
    double sigma_decay = 0.99;
    double sigma_min = 1.5;
    double threshold = 0.2;

    void validate() const;
    std::string to_json() const;
    static IterativeSchedule from_json(const std::string& text);
};

enum class StepKind { er, hio };

/// Which projection the schedule applies at iteration `i` (0-based).
StepKind step_kind(const IterativeSchedule& s, long i);
/// Whether a shrink-wrap update precedes iteration `i`.
bool shrinkwrap_due(const IterativeSchedule& s, long i);

/// F = fft(rho); F' = amplitude * F / |F| (phase 0 where F = 0); returns ifft(F').
ComplexVolume modulus_projection(const ComplexVolume& rho, const DiffractionPattern& pattern);

ReconstructionState er_step(ReconstructionState state, const DiffractionPattern& pattern);
ReconstructionState hio_step(ReconstructionState state, const DiffractionPattern& pattern, double beta);

/// Threshold of the Gaussian-blurred modulus of the estimate at `threshold` times its maximum.
SupportMask shrinkwrap_update(const ReconstructionState& state, double sigma, double threshold);

/// Random-phase start: ifft(amplitude * e^{i theta}), theta ~ U[-pi, pi]; half-size box support.
ReconstructionState initial_state(const DiffractionPattern& pattern, std::uint64_t seed);

struct IterativeResult {
    ReconstructionState state;
    RunReport report;
};

IterativeResult run_schedule(const DiffractionPattern& pattern, const IterativeSchedule& schedule, std::uint64_t seed);

}  // namespace cxdi
