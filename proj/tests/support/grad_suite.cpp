#include "grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cxdi/layers.hpp"
#include "cxdi/metrics.hpp"
#include "cxdi/network.hpp"
#include "cxdi/optimize.hpp"

namespace cxdi::testing {

using nn::Extent3;
using nn::Tensor;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double sd = 1.0, double mean = 0.0) {
    std::normal_distribution<double> g(mean, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

Tensor rand_tensor(int c, int x, int y, int z, std::mt19937_64& rng) {
    Tensor t(c, x, y, z);
    t.data = randn(t.size(), rng);
    return t;
}

Tensor with_data(const Tensor& shape, std::vector<double> data) {
    Tensor t = shape;
    t.data = std::move(data);
    return t;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

RealVolume rand_volume(const Grid3& g, std::mt19937_64& rng, double sd, double mean) {
    return RealVolume(g, randn(g.size(), rng, sd, mean));
}

void conv_checks(std::vector<GradCheck>& out, const std::string& name, const Extent3& k, std::mt19937_64& rng) {
    const int cin = 3;
    const int cout = 4;
    const Tensor x = rand_tensor(cin, 6, 5, 4, rng);
    const auto w = randn(nn::conv_weight_count(cin, cout, k), rng, 0.3);
    const auto b = randn(cout, rng, 0.1);
    const Tensor probe = rand_tensor(cout, 6, 5, 4, rng);
    const auto g = nn::conv3d_backward(probe, x, w, k);

    out.push_back(check_gradient(
        name + " input",
        [&](const std::vector<double>& v) { return dot(probe.data, nn::conv3d_forward(with_data(x, v), w, b, cout, k).data); },
        x.data, g.input.data, kFdProbes, rng()));
    const std::size_t nw = w.size();
    out.push_back(check_gradient(
        name + " weights+bias",
        [&](const std::vector<double>& v) {
            std::span<const double> all(v);
            return dot(probe.data, nn::conv3d_forward(x, all.first(nw), all.subspan(nw), cout, k).data);
        },
        concat(w, b), concat(g.weights, g.bias), kFdProbes, rng()));
}

}  // namespace

GradCheck check_gradient(const std::string& name, const std::function<double(const std::vector<double>&)>& f,
                         std::vector<double> x, const std::vector<double>& analytic, int probes,
                         std::uint64_t seed) {
    GradCheck r{name, 0, 0, 0.0, 0, 0.0, 0.0};
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const double f0 = f(x);
    for (std::size_t i : idx) {
        if (r.probes >= probes) break;
        const double x0 = x[i];
        x[i] = x0 + kFdStep;
        const double fp = f(x);
        x[i] = x0 - kFdStep;
        const double fm = f(x);
        x[i] = x0;
        const double fwd = (fp - f0) / kFdStep;
        const double bwd = (f0 - fm) / kFdStep;
        if (std::abs(fwd - bwd) > kKinkRatio * std::max({std::abs(fwd), std::abs(bwd), kFdFloor})) {
            ++r.kinks;
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * kFdStep);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), kFdFloor});
        const double rel = std::abs(numeric - analytic[i]) / denom;
        if (rel >= r.max_rel) {
            r.max_rel = rel;
            r.worst_index = i;
            r.worst_analytic = analytic[i];
            r.worst_numeric = numeric;
        }
        ++r.probes;
    }
    return r;
}

std::vector<GradCheck> gradient_suite(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradCheck> out;

    conv_checks(out, "conv3d 3x3x3", {3, 3, 3}, rng);
    conv_checks(out, "factorized conv 3x1x1", {3, 1, 1}, rng);
    conv_checks(out, "factorized conv 1x3x1", {1, 3, 1}, rng);
    conv_checks(out, "factorized conv 1x1x3", {1, 1, 3}, rng);

    for (double slope : {0.01, 0.0}) {
        const Tensor x = rand_tensor(2, 4, 4, 4, rng);
        const Tensor probe = rand_tensor(2, 4, 4, 4, rng);
        out.push_back(check_gradient(
            slope > 0 ? "lrelu" : "relu",
            [&](const std::vector<double>& v) { return dot(probe.data, nn::lrelu_forward(with_data(x, v), slope).data); },
            x.data, nn::lrelu_backward(probe, x, slope).data, kFdProbes, rng()));
    }

    {
        const Tensor x = rand_tensor(3, 4, 3, 4, rng);
        const auto gamma = randn(3, rng, 0.2, 1.0);
        const auto beta = randn(3, rng, 0.2);
        const Tensor probe = rand_tensor(3, 4, 3, 4, rng);
        nn::NormCache cache;
        nn::norm_forward(x, gamma, beta, &cache);
        const auto g = nn::norm_backward(probe, cache, gamma);
        out.push_back(check_gradient(
            "norm input",
            [&](const std::vector<double>& v) { return dot(probe.data, nn::norm_forward(with_data(x, v), gamma, beta, nullptr).data); },
            x.data, g.input.data, kFdProbes, rng()));
        // gamma and beta have 6 entries; the probe count covers them all and adds input coordinates.
        out.push_back(check_gradient(
            "norm input+affine",
            [&](const std::vector<double>& v) {
                std::span<const double> all(v);
                const std::size_t n = x.size();
                return dot(probe.data, nn::norm_forward(with_data(x, {all.begin(), all.begin() + n}),
                                                        all.subspan(n, 3), all.subspan(n + 3), nullptr)
                                           .data);
            },
            concat(x.data, concat(gamma, beta)), concat(g.input.data, concat(g.gamma, g.beta)), kFdProbes, rng()));
    }

    {
        const Tensor x = rand_tensor(2, 6, 4, 4, rng);
        const Tensor probe = rand_tensor(2, 3, 2, 2, rng);
        std::vector<std::uint32_t> arg;
        nn::maxpool2_forward(x, &arg);
        out.push_back(check_gradient(
            "maxpool2",
            [&](const std::vector<double>& v) { return dot(probe.data, nn::maxpool2_forward(with_data(x, v), nullptr).data); },
            x.data, nn::maxpool2_backward(probe, arg, x).data, kFdProbes, rng()));
    }

    for (auto mode : {nn::UpsampleMode::nearest, nn::UpsampleMode::trilinear}) {
        const Tensor x = rand_tensor(2, 3, 4, 2, rng);
        const Tensor probe = rand_tensor(2, 6, 8, 4, rng);
        out.push_back(check_gradient(
            mode == nn::UpsampleMode::nearest ? "upsample2 nearest" : "upsample2 trilinear",
            [&](const std::vector<double>& v) { return dot(probe.data, nn::upsample2_forward(with_data(x, v), mode).data); },
            x.data, nn::upsample2_backward(probe, mode, x).data, kFdProbes, rng()));
    }

    const Grid3 pattern_grid{8, 8, 8};
    const Grid3 half = pattern_grid.half();
    const double phase_scale = 1.3;

    {
        const RealVolume amp = rand_volume(half, rng, 0.3, 1.0);
        const RealVolume phi = rand_volume(half, rng, 0.5, 0.0);
        const RealVolume amp_t = rand_volume(half, rng, 0.3, 1.0);
        const RealVolume phi_t = rand_volume(half, rng, 0.5, 0.0);
        const SupervisedWeights w{1.0, 0.7, 1.5};
        const auto g = supervised_loss_grad(amp, phi, amp_t, phi_t, w, pattern_grid, phase_scale, false);
        const std::size_t n = half.size();
        out.push_back(check_gradient(
            "supervised loss (amplitude, phase)",
            [&](const std::vector<double>& v) {
                RealVolume a(half, std::vector<double>(v.begin(), v.begin() + n));
                RealVolume p(half, std::vector<double>(v.begin() + n, v.end()));
                return supervised_loss(a, p, amp_t, phi_t, w, pattern_grid, phase_scale).total;
            },
            concat(amp.storage(), phi.storage()), concat(g.d_amp.storage(), g.d_phase.storage()), kFdProbes, rng()));
    }

    {
        const RealVolume amp = rand_volume(half, rng, 0.3, 1.0);
        const RealVolume phi = rand_volume(half, rng, 0.5, 0.0);
        RealVolume measured = rand_volume(pattern_grid, rng, 1.0, 0.0);
        for (auto& m : measured.values()) m = std::abs(m) * 4.0;
        const double b1 = 3.0;
        const double b2 = 1.0;
        const auto chain = diffraction_chain(amp, phi, phase_scale, pattern_grid);
        const auto lg = unsupervised_loss_grad(chain.amplitude, measured, b1, b2, false);
        const auto g = diffraction_chain_backward(chain, lg.d_predicted, amp, phi, phase_scale);
        const std::size_t n = half.size();
        out.push_back(check_gradient(
            "unsupervised loss through |FFT(pad)|",
            [&](const std::vector<double>& v) {
                RealVolume a(half, std::vector<double>(v.begin(), v.begin() + n));
                RealVolume p(half, std::vector<double>(v.begin() + n, v.end()));
                return unsupervised_loss(diffraction_chain(a, p, phase_scale, pattern_grid).amplitude, measured, b1, b2);
            },
            concat(amp.storage(), phi.storage()), concat(g.d_amp.storage(), g.d_phase.storage()), kFdProbes, rng()));
    }

    for (auto mode : {nn::UpsampleMode::nearest, nn::UpsampleMode::trilinear}) {
        nn::NetworkSpec spec;
        spec.input_grid = pattern_grid;
        spec.encoder_widths = {2, 4};
        spec.upsample = mode;
        const nn::Network net(spec);
        const auto params = nn::init_params(spec, rng());
        RealVolume pattern_amp = rand_volume(pattern_grid, rng, 1.0, 0.0);
        for (auto& m : pattern_amp.values()) m = std::abs(m);
        const DiffractionPattern pattern(pattern_amp, "probe");
        const std::string tag = mode == nn::UpsampleMode::nearest ? " (nearest)" : " (trilinear)";

        const auto probe = refine_loss_and_grad(net, params.values, pattern, 2.0, 1.0, phase_scale);
        out.push_back(check_gradient(
            "8^3 network, unsupervised loss" + tag,
            [&](const std::vector<double>& v) {
                return refine_loss_and_grad(net, v, pattern, 2.0, 1.0, phase_scale).loss;
            },
            params.values, probe.grads, kFdProbes, rng()));

        const RealVolume amp_t = rand_volume(half, rng, 0.3, 1.0);
        const RealVolume phi_t = rand_volume(half, rng, 0.3, 0.5);
        const SupervisedWeights w;
        auto supervised_value = [&](std::span<const double> v, std::vector<double>* grad) {
            nn::TapeState tape;
            const auto y = net.forward(pattern.amplitude, v, grad ? &tape : nullptr);
            const auto lg = supervised_loss_grad(y.amplitude, y.phase, amp_t, phi_t, w, pattern_grid, phase_scale, false);
            if (grad) *grad = net.backward(lg.d_amp, lg.d_phase, v, tape);
            return lg.terms.total;
        };
        std::vector<double> sg;
        supervised_value(params.values, &sg);
        out.push_back(check_gradient(
            "8^3 network, supervised loss" + tag,
            [&](const std::vector<double>& v) { return supervised_value(v, nullptr); }, params.values, sg, kFdProbes,
            rng()));
    }
    return out;
}

}  // namespace cxdi::testing
