#include "cxdi/analysis.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace cxdi {

namespace {

constexpr int kHistogramBins = 30;

ComplexVolume conj_invert(const ComplexVolume& v) {
    ComplexVolume out = reflect_center(v);
    for (auto& z : out.values()) z = std::conj(z);
    return out;
}

double amplitude_error(const ComplexVolume& a, const ComplexVolume& ref) { return rel_l2(modulus(a), modulus(ref)); }

double complex_error(const ComplexVolume& a, const ComplexVolume& ref) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - ref[i]);
        den += std::norm(ref[i]);
    }
    return std::sqrt(num / den);
}

// Translation t maximizing sum_r |c|(r) |ref|(r - t), wrapped to [-n/2, n/2).
std::array<int, 3> correlation_peak(const ComplexVolume& c, const ComplexVolume& ref) {
    const auto fc = fft_forward(to_complex(modulus(c)));
    const auto fr = fft_forward(to_complex(modulus(ref)));
    ComplexVolume prod(c.grid());
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = fc[i] * std::conj(fr[i]);
    const auto corr = fft_inverse(prod);
    std::size_t best = 0;
    for (std::size_t i = 1; i < corr.size(); ++i) {
        if (corr[i].real() > corr[best].real()) best = i;
    }
    // The centered transforms place zero lag on the center voxel.
    const Grid3& g = c.grid();
    const int dims[3] = {g.nx, g.ny, g.nz};
    const int idx[3] = {static_cast<int>(best % g.nx), static_cast<int>((best / g.nx) % g.ny),
                        static_cast<int>(best / (static_cast<std::size_t>(g.nx) * g.ny))};
    std::array<int, 3> t{};
    for (int a = 0; a < 3; ++a) {
        t[a] = idx[a] - dims[a] / 2;
        if (t[a] >= dims[a] / 2) t[a] -= dims[a];
        if (t[a] < -dims[a] / 2) t[a] += dims[a];
    }
    return t;
}

// Circular mean of the phase difference where both amplitudes exceed 10% of their maxima.
double joint_phase_offset(const ComplexVolume& c, const ComplexVolume& ref) {
    double mc = 0.0;
    double mr = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        mc = std::max(mc, std::abs(c[i]));
        mr = std::max(mr, std::abs(ref[i]));
    }
    cdouble acc{0.0, 0.0};
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double ac = std::abs(c[i]);
        const double ar = std::abs(ref[i]);
        if (ac > 0.1 * mc && ar > 0.1 * mr) acc += (c[i] / ac) * std::conj(ref[i] / ar);
    }
    return std::abs(acc) > 0.0 ? std::arg(acc) : 0.0;
}

int effective_jobs(int requested, int runs) {
    int jobs = std::max(1, requested);
    if (const char* env = std::getenv("CXDI_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) jobs = std::min(jobs, cap);
    }
    return std::min(jobs, std::max(1, runs));
}

nlohmann::ordered_json summary_json(const MetricSummary& s) {
    return {{"mean", s.mean},
            {"sd", s.sd},
            {"histogram", {{"lo", s.histogram.lo}, {"hi", s.histogram.hi}, {"counts", s.histogram.counts}}}};
}

}  // namespace

ComplexVolume apply_alignment(const ComplexVolume& candidate, const AlignmentTransform& t) {
    ComplexVolume c = t.twin ? conj_invert(candidate) : candidate;
    c = circular_shift(c, -t.translation[0], -t.translation[1], -t.translation[2]);
    const cdouble rot = std::polar(1.0, -t.phase_offset);
    for (auto& z : c.values()) z *= rot;
    return c;
}

Alignment align_to_reference(const ComplexVolume& candidate, const ComplexVolume& reference) {
    if (candidate.grid() != reference.grid()) {
        throw Error(Errc::ShapeMismatch, "alignment needs equal grids, got " + to_string(candidate.grid()) + " and " +
                                             to_string(reference.grid()));
    }
    Alignment best{candidate, {}, amplitude_error(candidate, reference), complex_error(candidate, reference)};
    for (bool twin : {false, true}) {
        const ComplexVolume c = twin ? conj_invert(candidate) : candidate;
        AlignmentTransform t;
        t.twin = twin;
        const auto shift = correlation_peak(c, reference);
        std::copy(shift.begin(), shift.end(), t.translation);
        ComplexVolume moved = circular_shift(c, -shift[0], -shift[1], -shift[2]);
        t.phase_offset = joint_phase_offset(moved, reference);
        const cdouble rot = std::polar(1.0, -t.phase_offset);
        for (auto& z : moved.values()) z *= rot;

        const double ea = amplitude_error(moved, reference);
        const double ec = complex_error(moved, reference);
        const double tol = 1e-12 * std::max(1.0, best.amplitude_error);
        if (ea < best.amplitude_error - tol || (std::abs(ea - best.amplitude_error) <= tol && ec < best.complex_error)) {
            best = {std::move(moved), t, ea, ec};
        }
    }
    return best;
}

double aligned_amplitude_error(const ComplexVolume& candidate, const ComplexVolume& reference) {
    return align_to_reference(candidate, reference).amplitude_error;
}

std::string_view to_string(EnsembleMethod m) noexcept {
    switch (m) {
        case EnsembleMethod::iterative: return "iterative";
        case EnsembleMethod::refine_random: return "refine-random";
        case EnsembleMethod::refine_transfer: return "refine-transfer";
    }
    return "?";
}

EnsembleMethod parse_method(std::string_view s) {
    for (auto m : {EnsembleMethod::iterative, EnsembleMethod::refine_random, EnsembleMethod::refine_transfer}) {
        if (s == to_string(m)) return m;
    }
    throw Error(Errc::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

Histogram fixed_histogram(const std::vector<double>& values, double mean, double sd) {
    Histogram h{mean - 4.0 * sd, mean + 4.0 * sd, std::vector<long>(kHistogramBins, 0)};
    for (double v : values) {
        int bin = kHistogramBins / 2;
        if (h.hi > h.lo) {
            bin = static_cast<int>(std::floor((v - h.lo) / (h.hi - h.lo) * kHistogramBins));
            bin = std::clamp(bin, 0, kHistogramBins - 1);
        }
        ++h.counts[bin];
    }
    return h;
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) {
        s.histogram = fixed_histogram(values, 0.0, 0.0);
        return s;
    }
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / (n - 1.0));
    }
    s.histogram = fixed_histogram(values, s.mean, s.sd);
    return s;
}

std::vector<double> EnsembleReport::chi2_values() const {
    std::vector<double> out;
    for (const auto& r : runs) {
        if (!r.failed) out.push_back(r.chi2);
    }
    return out;
}

std::vector<double> EnsembleReport::rp_values() const {
    std::vector<double> out;
    for (const auto& r : runs) {
        if (!r.failed) out.push_back(r.modified_rp);
    }
    return out;
}

std::string EnsembleReport::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = method;
    j["run_count"] = runs.size();
    j["excluded"] = excluded;
    j["summary"] = {{"chi2", summary_json(chi2)}, {"modified_rp", summary_json(modified_rp)}};
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : runs) arr.push_back(nlohmann::ordered_json::parse(r.to_json()));
    j["runs"] = std::move(arr);
    return j.dump(2);
}

std::string EnsembleReport::histogram_csv() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "metric,bin,lo,hi,count\n";
    auto emit = [&](const char* name, const Histogram& h) {
        const double w = (h.hi - h.lo) / kHistogramBins;
        for (int b = 0; b < kHistogramBins; ++b) {
            ss << name << ',' << b << ',' << h.lo + b * w << ',' << h.lo + (b + 1) * w << ',' << h.counts[b] << '\n';
        }
    };
    emit("chi2", chi2.histogram);
    emit("modified_rp", modified_rp.histogram);
    return ss.str();
}

RunReport refine_report(const RefineResult& r, const DiffractionPattern& pattern, std::string method,
                        std::uint64_t seed) {
    RunReport rep;
    rep.method = std::move(method);
    rep.seed = seed;
    rep.chi2 = chi2_loss(r.predicted_amplitude, pattern.amplitude);
    rep.modified_rp = 1.0 - pearson_loss(r.predicted_amplitude, pattern.amplitude);
    rep.loss_trace.reserve(r.trace.size());
    for (const auto& row : r.trace) rep.loss_trace.emplace_back(row.epoch, row.loss);
    const Grid3& g = pattern.grid();
    rep.fsw = fourier_spectral_weight(r.predicted_amplitude, std::min({g.nx, g.ny, g.nz}) / 2);
    return rep;
}

RunReport single_run(const DiffractionPattern& pattern, const EnsembleOptions& opts, std::uint64_t seed) {
    const std::string method(to_string(opts.method));
    try {
        RunReport rep;
        if (opts.method == EnsembleMethod::iterative) {
            rep = run_schedule(pattern, opts.iterative, seed).report;
        } else {
            RefineConfig cfg = opts.refine;
            if (opts.method == EnsembleMethod::refine_random) {
                cfg.init = RandomInit{seed};
            } else if (!std::holds_alternative<TransferInit>(cfg.init)) {
                throw Error(Errc::InvalidArgument, "refine-transfer needs pretrained parameters");
            }
            rep = refine_report(unsupervised_refine(pattern, cfg), pattern, method, seed);
        }
        if (!std::isfinite(rep.chi2) || !std::isfinite(rep.modified_rp)) {
            rep.failed = true;
            rep.failure = "non-finite metrics";
        }
        return rep;
    } catch (const std::exception& e) {
        RunReport rep;
        rep.method = method;
        rep.seed = seed;
        rep.failed = true;
        rep.failure = e.what();
        return rep;
    }
}

EnsembleReport ensemble_run(const DiffractionPattern& pattern, const EnsembleOptions& opts) {
    if (opts.runs < 2) throw Error(Errc::InvalidArgument, "an ensemble needs at least 2 runs");
    if (opts.method == EnsembleMethod::iterative) {
        opts.iterative.validate();
    } else {
        opts.refine.schedule.validate();
        if (opts.method == EnsembleMethod::refine_transfer && !std::holds_alternative<TransferInit>(opts.refine.init)) {
            throw Error(Errc::InvalidArgument, "refine-transfer needs pretrained parameters");
        }
    }
    EnsembleReport report;
    report.method = std::string(to_string(opts.method));
    report.runs.resize(static_cast<std::size_t>(opts.runs));

    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < opts.runs; i = next++) {
            report.runs[i] = single_run(pattern, opts, opts.base_seed + static_cast<std::uint64_t>(i) * opts.seed_stride);
        }
    };
    const int jobs = effective_jobs(opts.jobs, opts.runs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < jobs; ++k) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& r : report.runs) report.excluded += r.failed ? 1 : 0;
    report.chi2 = summarize(report.chi2_values());
    report.modified_rp = summarize(report.rp_values());
    return report;
}

std::vector<double> compare_fsw(const RealVolume& a, const RealVolume& b, int n_shells) {
    if (a.grid() != b.grid()) {
        throw Error(Errc::ShapeMismatch, "FSW comparison needs equal grids, got " + to_string(a.grid()) + " and " +
                                             to_string(b.grid()));
    }
    const auto fa = fourier_spectral_weight(a, n_shells);
    const auto fb = fourier_spectral_weight(b, n_shells);
    std::vector<double> rel(fa.weights.size());
    for (std::size_t s = 0; s < rel.size(); ++s) {
        rel[s] = std::abs(fa.weights[s] - fb.weights[s]) /
                 std::max(fa.weights[s], std::numeric_limits<double>::min());
    }
    return rel;
}

std::vector<double> compare_fsw(const DiffractionPattern& a, const DiffractionPattern& b, int n_shells) {
    return compare_fsw(a.amplitude, b.amplitude, n_shells);
}

std::string fsw_comparison_csv(const FswProfile& a, const FswProfile& b, const std::vector<double>& rel) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "shell_index,radius_lo,radius_hi,weight_a,weight_b,relative_difference\n";
    for (std::size_t s = 0; s < rel.size(); ++s) {
        ss << s << ',' << a.shell_edges[s] << ',' << a.shell_edges[s + 1] << ',' << a.weights[s] << ','
           << b.weights[s] << ',' << rel[s] << '\n';
    }
    return ss.str();
}

DiffractionPattern add_poisson_noise(const DiffractionPattern& pattern, double photon_budget, std::uint64_t seed) {
    if (!(photon_budget > 0) || !std::isfinite(photon_budget)) {
        throw Error(Errc::InvalidArgument, "photon budget must be positive and finite");
    }
    double total = 0.0;
    for (double a : pattern.amplitude.values()) total += a * a;
    if (!(total > 0)) throw Error(Errc::ZeroReference, "pattern has no intensity");
    const double scale = photon_budget / total;
    std::mt19937_64 rng(seed);
    RealVolume out(pattern.grid());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double mean = pattern.amplitude[i] * pattern.amplitude[i] * scale;
        double counts = 0.0;
        if (mean > 0.0) {
            std::poisson_distribution<long long> draw(mean);
            counts = static_cast<double>(draw(rng));
        }
        out[i] = std::sqrt(counts / scale);
    }
    return DiffractionPattern(std::move(out), pattern.source_tag + "+poisson");
}

}  // namespace cxdi
