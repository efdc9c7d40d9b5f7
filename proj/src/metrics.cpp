#include "cxdi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cxdi {

namespace {

void require_same(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw Error(Errc::ShapeMismatch, "loss arguments differ in size");
}

void require_same(const RealVolume& a, const RealVolume& b) {
    if (a.grid() != b.grid()) throw Error(Errc::ShapeMismatch, "loss arguments live on different grids");
}

double mean(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size()); }

// Zero variance up to roundoff of the mean subtraction.
bool is_constant(std::span<const double> x, double mu) {
    double peak = 0.0, dev = 0.0;
    for (double v : x) {
        peak = std::max(peak, std::abs(v));
        dev = std::max(dev, std::abs(v - mu));
    }
    return dev <= 1e-13 * peak;
}

struct PearsonParts {
    double mean_p, mean_g, cross, var_p, var_g;
};

PearsonParts pearson_parts(std::span<const double> p, std::span<const double> g) {
    PearsonParts s{mean(p), mean(g), 0.0, 0.0, 0.0};
    if (is_constant(p, s.mean_p)) throw Error(Errc::ConstantInput, "predicted array has zero variance");
    if (is_constant(g, s.mean_g)) throw Error(Errc::ConstantInput, "reference array has zero variance");
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double dp = p[i] - s.mean_p, dg = g[i] - s.mean_g;
        s.cross += std::abs(dp) * std::abs(dg);
        s.var_p += dp * dp;
        s.var_g += dg * dg;
    }
    return s;
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

double rel_l2(const RealVolume& predicted, const RealVolume& reference) {
    require_same(predicted, reference);
    return rel_l2_grad(predicted.values(), reference.values()).value;
}

ValueGrad rel_l2_grad(std::span<const double> p, std::span<const double> g) {
    require_same(p, g);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += (p[i] - g[i]) * (p[i] - g[i]);
        den += g[i] * g[i];
    }
    if (den == 0.0) throw Error(Errc::ZeroReference, "reference has zero energy");
    ValueGrad out;
    const double nn = std::sqrt(num), dd = std::sqrt(den);
    out.value = nn / dd;
    out.grad.assign(p.size(), 0.0);
    if (nn > 0.0) {
        for (std::size_t i = 0; i < p.size(); ++i) out.grad[i] = (p[i] - g[i]) / (nn * dd);
    }
    return out;
}

double pearson_loss(const RealVolume& predicted, const RealVolume& reference) {
    require_same(predicted, reference);
    const auto s = pearson_parts(predicted.values(), reference.values());
    return 1.0 - s.cross / std::sqrt(s.var_p * s.var_g);
}

ValueGrad pearson_loss_grad(std::span<const double> p, std::span<const double> g) {
    require_same(p, g);
    const auto s = pearson_parts(p, g);
    const double norm = std::sqrt(s.var_p * s.var_g);
    ValueGrad out;
    out.value = 1.0 - s.cross / norm;

    // d cross / d p_j = sign(dp_j)|dg_j| - mean_i(sign(dp_i)|dg_i|); d var_p / d p_j = 2 dp_j.
    const std::size_t n = p.size();
    out.grad.resize(n);
    double mean_term = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.grad[i] = sign(p[i] - s.mean_p) * std::abs(g[i] - s.mean_g);
        mean_term += out.grad[i];
    }
    mean_term /= static_cast<double>(n);
    const double ratio = s.cross / (s.var_p * norm);
    for (std::size_t i = 0; i < n; ++i) {
        out.grad[i] = -(out.grad[i] - mean_term) / norm + ratio * (p[i] - s.mean_p);
    }
    return out;
}

double chi2_loss(const RealVolume& predicted_amp, const RealVolume& measured_amp) {
    require_same(predicted_amp, measured_amp);
    return chi2_loss_grad(predicted_amp.values(), measured_amp.values()).value;
}

ValueGrad chi2_loss_grad(std::span<const double> p, std::span<const double> m) {
    require_same(p, m);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += (p[i] - m[i]) * (p[i] - m[i]);
        den += m[i] * m[i];
    }
    if (den == 0.0) throw Error(Errc::ZeroReference, "measured intensity sums to zero");
    ValueGrad out;
    out.value = num / den;
    out.grad.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out.grad[i] = 2.0 * (p[i] - m[i]) / den;
    return out;
}

void SupervisedWeights::validate() const {
    if (amplitude < 0 || phase < 0 || diffraction < 0 || amplitude + phase + diffraction <= 0) {
        throw Error(Errc::InvalidArgument, "supervised weights must be non-negative with a positive sum");
    }
}

void WeibullSchedule::validate() const {
    if (!(k > 0) || !(lambda > 0) || !(a0 >= 0) || !(epoch_divisor > 0)) {
        throw Error(Errc::InvalidArgument, "Weibull schedule needs k > 0, lambda > 0, a0 >= 0, divisor > 0");
    }
}

double weibull_beta1(long epoch, const WeibullSchedule& s) {
    if (epoch < 0) throw Error(Errc::InvalidArgument, "epoch must be non-negative");
    const double t = static_cast<double>(epoch) / s.epoch_divisor / s.lambda;
    // pow(0, 0) == 1, which is the k = 1 convention at epoch 0.
    return s.a0 * (s.k / s.lambda) * std::pow(t, s.k - 1.0) * std::exp(-std::pow(t, s.k)) + s.a1;
}

DiffractionChain diffraction_chain(const RealVolume& amp, const RealVolume& phi, double phase_scale,
                                   const Grid3& pattern_grid) {
    DiffractionChain out;
    out.field = fft_forward(zero_pad_center(polar(amp, phi, phase_scale), pattern_grid));
    out.amplitude = modulus(out.field);
    return out;
}

AmpPhaseGrad diffraction_chain_backward(const DiffractionChain& chain, const RealVolume& d_amplitude,
                                        const RealVolume& amp, const RealVolume& phi, double phase_scale) {
    const Grid3& pg = chain.field.grid();
    if (d_amplitude.grid() != pg) throw Error(Errc::ShapeMismatch, "amplitude gradient grid mismatch");
    ComplexVolume g_field(pg);
    for (std::size_t i = 0; i < g_field.size(); ++i) {
        const double a = chain.amplitude[i];
        g_field[i] = a > 0.0 ? d_amplitude[i] * chain.field[i] / a : cdouble{};
    }
    // Adjoint of the unnormalized centered DFT is N times the normalized inverse.
    ComplexVolume g_obj = fft_inverse(g_field);
    const double n = static_cast<double>(g_obj.size());
    g_obj = crop_center(g_obj, amp.grid());

    AmpPhaseGrad out{RealVolume(amp.grid()), RealVolume(amp.grid())};
    for (std::size_t i = 0; i < g_obj.size(); ++i) {
        const cdouble rot = n * g_obj[i] * std::polar(1.0, -phase_scale * phi[i]);
        out.d_amp[i] = rot.real();
        out.d_phase[i] = phase_scale * amp[i] * rot.imag();
    }
    return out;
}

SupervisedTerms supervised_loss(const RealVolume& amp_pred, const RealVolume& phase_pred, const RealVolume& amp_true,
                                const RealVolume& phase_true, const SupervisedWeights& w, const Grid3& pattern_grid,
                                double phase_scale) {
    return supervised_loss_grad(amp_pred, phase_pred, amp_true, phase_true, w, pattern_grid, phase_scale, false).terms;
}

SupervisedLossGrad supervised_loss_grad(const RealVolume& amp_pred, const RealVolume& phase_pred,
                                        const RealVolume& amp_true, const RealVolume& phase_true,
                                        const SupervisedWeights& w, const Grid3& pattern_grid, double phase_scale,
                                        bool tolerate_constant) {
    w.validate();
    require_same(amp_pred, amp_true);
    require_same(phase_pred, phase_true);
    require_same(amp_pred, phase_pred);
    const double wsum = w.amplitude + w.phase + w.diffraction;

    const auto l1 = rel_l2_grad(amp_pred.values(), amp_true.values());
    const auto l2 = rel_l2_grad(phase_pred.values(), phase_true.values());
    const auto pred_chain = diffraction_chain(amp_pred, phase_pred, phase_scale, pattern_grid);
    const auto true_amp = diffraction_chain(amp_true, phase_true, phase_scale, pattern_grid).amplitude;

    SupervisedLossGrad out;
    ValueGrad l3;
    try {
        l3 = pearson_loss_grad(pred_chain.amplitude.values(), true_amp.values());
    } catch (const Error& e) {
        if (!tolerate_constant || e.code() != Errc::ConstantInput) throw;
        l3.value = 1.0;
        l3.grad.assign(pred_chain.amplitude.size(), 0.0);
        out.pearson_fallback = true;
    }

    out.terms.amplitude = l1.value;
    out.terms.phase = l2.value;
    out.terms.diffraction = l3.value;
    out.terms.total = (w.amplitude * l1.value + w.phase * l2.value + w.diffraction * l3.value) / wsum;

    RealVolume d_diff(pattern_grid);
    for (std::size_t i = 0; i < d_diff.size(); ++i) d_diff[i] = w.diffraction * l3.grad[i] / wsum;
    auto chain_grad = diffraction_chain_backward(pred_chain, d_diff, amp_pred, phase_pred, phase_scale);
    out.d_amp = std::move(chain_grad.d_amp);
    out.d_phase = std::move(chain_grad.d_phase);
    for (std::size_t i = 0; i < out.d_amp.size(); ++i) {
        out.d_amp[i] += w.amplitude * l1.grad[i] / wsum;
        out.d_phase[i] += w.phase * l2.grad[i] / wsum;
    }
    return out;
}

double unsupervised_loss(const RealVolume& predicted_amp, const RealVolume& measured_amp, double beta1,
                         double beta2) {
    return unsupervised_loss_grad(predicted_amp, measured_amp, beta1, beta2, false).value;
}

UnsupervisedLossGrad unsupervised_loss_grad(const RealVolume& predicted_amp, const RealVolume& measured_amp,
                                            double beta1, double beta2, bool tolerate_constant) {
    require_same(predicted_amp, measured_amp);
    if (!(beta1 >= 0) || !(beta2 >= 0) || !(beta1 + beta2 > 0)) {
        throw Error(Errc::InvalidArgument, "beta weights must be non-negative with a positive sum");
    }
    UnsupervisedLossGrad out;
    const auto l4 = chi2_loss_grad(predicted_amp.values(), measured_amp.values());
    ValueGrad l3;
    try {
        l3 = pearson_loss_grad(predicted_amp.values(), measured_amp.values());
    } catch (const Error& e) {
        if (!tolerate_constant || e.code() != Errc::ConstantInput) throw;
        l3.value = 1.0;
        l3.grad.assign(predicted_amp.size(), 0.0);
        out.pearson_fallback = true;
    }
    const double bsum = beta1 + beta2;
    out.pearson = l3.value;
    out.chi2 = l4.value;
    out.value = (beta1 * l3.value + beta2 * l4.value) / bsum;
    out.d_predicted = RealVolume(predicted_amp.grid());
    for (std::size_t i = 0; i < out.d_predicted.size(); ++i) {
        out.d_predicted[i] = (beta1 * l3.grad[i] + beta2 * l4.grad[i]) / bsum;
    }
    return out;
}

std::string FswProfile::to_csv() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "shell_index,radius_lo,radius_hi,weight\n";
    for (std::size_t i = 0; i < weights.size(); ++i) {
        ss << i << ',' << shell_edges[i] << ',' << shell_edges[i + 1] << ',' << weights[i] << '\n';
    }
    return ss.str();
}

FswProfile fourier_spectral_weight(const RealVolume& amplitude, int n_shells) {
    if (n_shells < 1) throw Error(Errc::InvalidArgument, "n_shells must be >= 1");
    const Grid3& g = amplitude.grid();
    const double rmax = 0.5 * std::min({g.nx, g.ny, g.nz});
    const double width = rmax / n_shells;

    FswProfile out;
    out.shell_edges.resize(n_shells + 1);
    for (int i = 0; i <= n_shells; ++i) out.shell_edges[i] = width * i;
    out.weights.assign(n_shells, 0.0);
    for (int z = 0; z < g.nz; ++z) {
        const double dz = z - g.nz / 2;
        for (int y = 0; y < g.ny; ++y) {
            const double dy = y - g.ny / 2;
            for (int x = 0; x < g.nx; ++x) {
                const double dx = x - g.nx / 2;
                const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
                const int bin = std::min(n_shells - 1, static_cast<int>(r / width));
                out.weights[bin] += amplitude.at(x, y, z);
            }
        }
    }
    return out;
}

FswProfile fourier_spectral_weight(const DiffractionPattern& pattern, int n_shells) {
    return fourier_spectral_weight(pattern.amplitude, n_shells);
}

}  // namespace cxdi
