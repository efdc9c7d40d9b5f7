#pragma once

#include <span>
#include <string>
#include <vector>

#include "cxdi/volume.hpp"

namespace cxdi {

/// sqrt(sum (p - g)^2) / sqrt(sum g^2). Throws ZeroReference when the reference has no energy.
double rel_l2(const RealVolume& predicted, const RealVolume& reference);

/// 1 - sum |dp||dg| / sqrt(sum dp^2 * sum dg^2), with d* the deviations from each mean.
/// Invariant under affine maps of either argument, including sign flips.
double pearson_loss(const RealVolume& predicted, const RealVolume& reference);

/// sum (p - m)^2 / sum m^2 for amplitudes p (predicted) and m (measured).
double chi2_loss(const RealVolume& predicted_amp, const RealVolume& measured_amp);

/// A loss value together with its gradient with respect to the predicted argument.
struct ValueGrad {
    double value = 0.0;
    std::vector<double> grad;
};

ValueGrad rel_l2_grad(std::span<const double> predicted, std::span<const double> reference);
ValueGrad pearson_loss_grad(std::span<const double> predicted, std::span<const double> reference);
ValueGrad chi2_loss_grad(std::span<const double> predicted_amp, std::span<const double> measured_amp);

struct SupervisedWeights {
    double amplitude = 1.0;
    double phase = 1.0;
    double diffraction = 1.0;

    void validate() const;
};

struct WeibullSchedule {
    double k = 1.0;
    double lambda = 0.5;
    double a0 = (1.0e4 - 1.0) / 2.0;
    double a1 = 1.0;
    double epoch_divisor = 1.0;

    void validate() const;
};

/// beta1 = a0 (k/lambda) (t/lambda)^(k-1) exp(-(t/lambda)^k) + a1 with t = epoch / epoch_divisor.
double weibull_beta1(long epoch, const WeibullSchedule& s);

/// Forward model from network-style outputs: rho = A exp(i s phi), zero-padded to the pattern grid,
/// transformed, and reduced to its modulus.
struct DiffractionChain {
    ComplexVolume field;  // centered FFT of the padded object
    RealVolume amplitude;  // |field|
};

DiffractionChain diffraction_chain(const RealVolume& amp, const RealVolume& phi, double phase_scale,
                                   const Grid3& pattern_grid);

struct AmpPhaseGrad {
    RealVolume d_amp;
    RealVolume d_phase;
};

/// Reverse mode of diffraction_chain. d|F| = 0 at F = 0 is taken as the subgradient 0.
AmpPhaseGrad diffraction_chain_backward(const DiffractionChain& chain, const RealVolume& d_amplitude,
                                        const RealVolume& amp, const RealVolume& phi, double phase_scale);

struct SupervisedTerms {
    double total = 0.0;
    double amplitude = 0.0;  // L1
    double phase = 0.0;      // L2
    double diffraction = 0.0;  // L3 on sqrt(I)
};

/// l_s on half-size predictions; sqrt(I) terms are computed on `pattern_grid` after zero padding.
SupervisedTerms supervised_loss(const RealVolume& amp_pred, const RealVolume& phase_pred, const RealVolume& amp_true,
                                const RealVolume& phase_true, const SupervisedWeights& w, const Grid3& pattern_grid,
                                double phase_scale = 1.0);

struct SupervisedLossGrad {
    SupervisedTerms terms;
    RealVolume d_amp;
    RealVolume d_phase;
    bool pearson_fallback = false;
};

/// Value and gradient of l_s. With `tolerate_constant`, a constant predicted diffraction amplitude
/// contributes L3 = 1 with zero gradient instead of throwing.
SupervisedLossGrad supervised_loss_grad(const RealVolume& amp_pred, const RealVolume& phase_pred,
                                        const RealVolume& amp_true, const RealVolume& phase_true,
                                        const SupervisedWeights& w, const Grid3& pattern_grid, double phase_scale,
                                        bool tolerate_constant);

/// l_u = (b1 L3 + b2 L4) / (b1 + b2).
double unsupervised_loss(const RealVolume& predicted_amp, const RealVolume& measured_amp, double beta1,
                         double beta2);

struct UnsupervisedLossGrad {
    double value = 0.0;
    double pearson = 0.0;  // L3
    double chi2 = 0.0;     // L4
    RealVolume d_predicted;
    bool pearson_fallback = false;
};

UnsupervisedLossGrad unsupervised_loss_grad(const RealVolume& predicted_amp, const RealVolume& measured_amp,
                                            double beta1, double beta2, bool tolerate_constant);

/// Amplitude summed over spherical shells about the center voxel.
struct FswProfile {
    std::vector<double> shell_edges;  // n_shells + 1 radii in voxels
    std::vector<double> weights;

    std::string to_csv() const;
};

/// Equal-width shells up to the largest inscribed radius; voxels beyond it fall in the last shell.
FswProfile fourier_spectral_weight(const RealVolume& amplitude, int n_shells);
FswProfile fourier_spectral_weight(const DiffractionPattern& pattern, int n_shells);

}  // namespace cxdi
