#include "cxdi/iterative.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "json.hpp"

namespace cxdi {

namespace {

void apply_support(ComplexVolume& v, const SupportMask& s) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!s.mask[i]) v[i] = {};
}

double reciprocal_chi2(const ComplexVolume& estimate, const DiffractionPattern& pattern) {
    return chi2_loss(modulus(fft_forward(estimate)), pattern.amplitude);
}

RealVolume gaussian_blur(const RealVolume& v, double sigma) {
    const Grid3& g = v.grid();
    ComplexVolume kernel(g);
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x) {
                const double dx = x - g.nx / 2, dy = y - g.ny / 2, dz = z - g.nz / 2;
                kernel.at(x, y, z) = std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * sigma * sigma));
            }
    ComplexVolume spec = fft_forward(to_complex(v));
    const ComplexVolume kspec = fft_forward(kernel);
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= kspec[i];
    const ComplexVolume blurred = fft_inverse(spec);
    RealVolume out(g);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = blurred[i].real();
    return out;
}

void check_finite(const ReconstructionState& s) {
    if (!all_finite(s.estimate)) {
        throw Error(Errc::NonFiniteState, "estimate became non-finite at iteration " + std::to_string(s.iteration));
    }
}

}  // namespace

SupportMask SupportMask::centered_box(const Grid3& grid, const Grid3& box) {
    SupportMask s{grid, std::vector<std::uint8_t>(grid.size(), 0)};
    const int ox = (grid.nx - box.nx) / 2, oy = (grid.ny - box.ny) / 2, oz = (grid.nz - box.nz) / 2;
    for (int z = oz; z < oz + box.nz; ++z)
        for (int y = oy; y < oy + box.ny; ++y)
            for (int x = ox; x < ox + box.nx; ++x) s.mask[grid.index(x, y, z)] = 1;
    return s;
}

std::size_t SupportMask::count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

void IterativeSchedule::validate() const {
    if (total_iters <= 0 || er_head < 0 || er_tail < 0 || er_head + er_tail > total_iters) {
        throw Error(Errc::InvalidArgument, "schedule needs er_head + er_tail <= total_iters");
    }
    if (block_len <= 0 || shrinkwrap_every <= 0 || shrinkwrap_start < 0) {
        throw Error(Errc::InvalidArgument, "block length and shrink-wrap cadence must be positive");
    }
    if (!(hio_beta > 0) || hio_beta > 1) throw Error(Errc::InvalidArgument, "HIO beta must be in (0, 1]");
    if (!(sigma0 > 0) || !(sigma_min > 0) || !(sigma_decay > 0) || !(threshold > 0) || !(threshold < 1)) {
        throw Error(Errc::InvalidArgument, "shrink-wrap needs sigma > 0 and threshold in (0, 1)");
    }
}

std::string IterativeSchedule::to_json() const {
    nlohmann::ordered_json j;
    j["total_iters"] = total_iters;
    j["er_head"] = er_head;
    j["block_len"] = block_len;
    j["hio_beta"] = hio_beta;
    j["shrinkwrap_start"] = shrinkwrap_start;
    j["shrinkwrap_every"] = shrinkwrap_every;
    j["er_tail"] = er_tail;
    j["sigma0"] = sigma0;
    j["sigma_decay"] = sigma_decay;
    j["sigma_min"] = sigma_min;
    j["threshold"] = threshold;
    return j.dump();
}

IterativeSchedule IterativeSchedule::from_json(const std::string& text) {
    IterativeSchedule s;
    try {
        const auto j = nlohmann::json::parse(text);
        s.total_iters = j.value("total_iters", s.total_iters);
        s.er_head = j.value("er_head", s.er_head);
        s.block_len = j.value("block_len", s.block_len);
        s.hio_beta = j.value("hio_beta", s.hio_beta);
        s.shrinkwrap_start = j.value("shrinkwrap_start", s.shrinkwrap_start);
        s.shrinkwrap_every = j.value("shrinkwrap_every", s.shrinkwrap_every);
        s.er_tail = j.value("er_tail", s.er_tail);
        s.sigma0 = j.value("sigma0", s.sigma0);
        s.sigma_decay = j.value("sigma_decay", s.sigma_decay);
        s.sigma_min = j.value("sigma_min", s.sigma_min);
        s.threshold = j.value("threshold", s.threshold);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("iterative schedule: ") + e.what());
    }
    s.validate();
    return s;
}

StepKind step_kind(const IterativeSchedule& s, long i) {
    if (i < s.er_head || i >= s.total_iters - s.er_tail) return StepKind::er;
    // HIO block first after the ER head, then alternate.
    return ((i - s.er_head) / s.block_len) % 2 == 0 ? StepKind::hio : StepKind::er;
}

bool shrinkwrap_due(const IterativeSchedule& s, long i) { return i > s.shrinkwrap_start && i % s.shrinkwrap_every == 0; }

ComplexVolume modulus_projection(const ComplexVolume& rho, const DiffractionPattern& pattern) {
    if (rho.grid() != pattern.grid()) throw Error(Errc::ShapeMismatch, "estimate and pattern grids differ");
    ComplexVolume f = fft_forward(rho);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double m = std::abs(f[i]);
        f[i] = m > 0.0 ? pattern.amplitude[i] * (f[i] / m) : cdouble{pattern.amplitude[i], 0.0};
    }
    return fft_inverse(f);
}

ReconstructionState er_step(ReconstructionState state, const DiffractionPattern& pattern) {
    state.estimate = modulus_projection(state.estimate, pattern);
    apply_support(state.estimate, state.support);
    ++state.iteration;
    state.error_trace.emplace_back(state.iteration, reciprocal_chi2(state.estimate, pattern));
    return state;
}

ReconstructionState hio_step(ReconstructionState state, const DiffractionPattern& pattern, double beta) {
    if (!(beta > 0) || beta > 1) throw Error(Errc::InvalidArgument, "HIO beta must be in (0, 1]");
    const ComplexVolume y = modulus_projection(state.estimate, pattern);
    for (std::size_t i = 0; i < y.size(); ++i) {
        state.estimate[i] = state.support.mask[i] ? y[i] : state.estimate[i] - beta * y[i];
    }
    ++state.iteration;
    state.error_trace.emplace_back(state.iteration, reciprocal_chi2(state.estimate, pattern));
    return state;
}

SupportMask shrinkwrap_update(const ReconstructionState& state, double sigma, double threshold) {
    if (!(sigma > 0) || !(threshold > 0) || !(threshold < 1)) {
        throw Error(Errc::InvalidArgument, "shrink-wrap needs sigma > 0 and threshold in (0, 1)");
    }
    const RealVolume blurred = gaussian_blur(modulus(state.estimate), sigma);
    const double peak = *std::max_element(blurred.values().begin(), blurred.values().end());
    SupportMask s{blurred.grid(), std::vector<std::uint8_t>(blurred.size(), 0)};
    if (!(peak > 0)) throw Error(Errc::EmptySupport, "blurred estimate has no positive maximum");
    // Relative slack absorbs FFT roundoff when the blurred field is flat.
    const double cut = threshold * peak * (1.0 - 1e-12);
    for (std::size_t i = 0; i < s.mask.size(); ++i) s.mask[i] = blurred[i] >= cut ? 1 : 0;
    if (s.count() == 0) throw Error(Errc::EmptySupport, "no voxel passed the shrink-wrap threshold");
    return s;
}

ReconstructionState initial_state(const DiffractionPattern& pattern, std::uint64_t seed) {
    const Grid3& g = pattern.grid();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    ComplexVolume f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::polar(pattern.amplitude[i], angle(rng));
    return {fft_inverse(f), SupportMask::centered_box(g, g.half()), 0, {}};
}

IterativeResult run_schedule(const DiffractionPattern& pattern, const IterativeSchedule& schedule, std::uint64_t seed) {
    schedule.validate();
    ReconstructionState state = initial_state(pattern, seed);
    double sigma = schedule.sigma0;
    for (long i = 0; i < schedule.total_iters; ++i) {
        if (shrinkwrap_due(schedule, i)) {
            state.support = shrinkwrap_update(state, std::max(sigma, schedule.sigma_min), schedule.threshold);
            sigma *= schedule.sigma_decay;
        }
        state = step_kind(schedule, i) == StepKind::er ? er_step(std::move(state), pattern)
                                                       : hio_step(std::move(state), pattern, schedule.hio_beta);
        check_finite(state);
    }

    IterativeResult out{std::move(state), {}};
    const RealVolume amp = modulus(fft_forward(out.state.estimate));
    out.report.method = "iterative";
    out.report.seed = seed;
    out.report.chi2 = chi2_loss(amp, pattern.amplitude);
    out.report.modified_rp = 1.0 - pearson_loss(amp, pattern.amplitude);
    out.report.loss_trace = out.state.error_trace;
    const Grid3& g = pattern.grid();
    out.report.fsw = fourier_spectral_weight(amp, std::min({g.nx, g.ny, g.nz}) / 2);
    return out;
}

}  // namespace cxdi
