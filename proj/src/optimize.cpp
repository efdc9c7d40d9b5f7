#include "cxdi/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

namespace cxdi {

namespace {

void require_same_size(std::span<double> p, std::span<const double> g) {
    if (p.size() != g.size()) throw Error(Errc::ShapeMismatch, "parameter and gradient sizes differ");
}

void warn_fallback(long& count, const char* where) {
    if (count++ == 0) {
        std::clog << "warning: " << where << ": constant predicted diffraction amplitude, Pearson term set to 1\n";
    }
}

struct SampleGrad {
    SupervisedTerms terms;
    std::vector<double> grads;
    bool fallback = false;
};

SampleGrad supervised_sample(const nn::Network& net, std::span<const double> params, const SampleRecord& s,
                             const SupervisedWeights& w, double phase_scale) {
    nn::TapeState tape;
    const auto out = net.forward(s.pattern.amplitude, params, &tape);
    const auto lg = supervised_loss_grad(out.amplitude, out.phase, s.target_amplitude(), s.target_phase(), w,
                                         s.pattern.grid(), phase_scale, true);
    return {lg.terms, net.backward(lg.d_amp, lg.d_phase, params, tape), lg.pearson_fallback};
}

void check_finite_loss(double v, const std::string& where) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteLoss, where + " produced a non-finite loss");
}

}  // namespace

std::string_view to_string(OptimizerKind k) noexcept { return k == OptimizerKind::adam ? "adam" : "sgd"; }

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
    require_same_size(params, grads);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& s, double lr) {
    require_same_size(params, grads);
    if (s.m.empty() && s.v.empty()) {
        s.m.assign(params.size(), 0.0);
        s.v.assign(params.size(), 0.0);
    }
    if (s.m.size() != params.size() || s.v.size() != params.size()) {
        throw Error(Errc::ShapeMismatch, "ADAM moments are shaped for a different parameter vector");
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        params[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.epsilon);
    }
}

OptimizerKind TrainSchedule::optimizer_at(long epoch) const {
    return (epoch / switch_every) % 2 == 0 ? OptimizerKind::adam : OptimizerKind::sgd;
}

double TrainSchedule::lr_at(long epoch) const {
    return lr0 * std::pow(lr_decay, static_cast<double>(epoch / decay_every));
}

void TrainSchedule::validate() const {
    if (total_epochs <= 0 || switch_every <= 0 || decay_every <= 0) {
        throw Error(Errc::InvalidArgument, "epoch counts and cadences must be positive");
    }
    if (!(lr0 > 0) || !(lr_decay > 0) || lr_decay > 1) {
        throw Error(Errc::InvalidArgument, "need lr0 > 0 and lr_decay in (0, 1]");
    }
}

void OptimizerState::step(OptimizerKind kind, double lr, std::span<double> params, std::span<const double> grads) {
    if (kind == OptimizerKind::adam) {
        adam_step(params, grads, adam, lr);
    } else {
        sgd_step(params, grads, lr);
    }
}

std::string TrainResult::curve_csv() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "epoch,train_loss,validation_loss,lr,optimizer\n";
    for (const auto& e : curve) {
        ss << e.epoch << ',' << e.train << ',' << e.validation << ',' << e.lr << ',' << to_string(e.optimizer) << '\n';
    }
    return ss.str();
}

double evaluate_supervised(const nn::Network& net, std::span<const double> params,
                           std::span<const SampleRecord* const> samples, const SupervisedWeights& w,
                           double phase_scale) {
    double total = 0.0;
    for (const SampleRecord* s : samples) {
        const auto out = net.forward(s->pattern.amplitude, params);
        total += supervised_loss_grad(out.amplitude, out.phase, s->target_amplitude(), s->target_phase(), w,
                                      s->pattern.grid(), phase_scale, true)
                     .terms.total;
    }
    return total / static_cast<double>(samples.size());
}

TrainResult supervised_train(std::span<const SampleRecord> dataset, const nn::NetworkSpec& spec,
                             const TrainConfig& config, const std::function<void(const EpochLosses&)>& on_epoch) {
    config.schedule.validate();
    config.weights.validate();
    if (config.batch_size <= 0) throw Error(Errc::InvalidArgument, "batch size must be positive");
    std::vector<const SampleRecord*> train, val;
    for (const auto& s : dataset) {
        if (s.pattern.grid() != spec.input_grid) {
            throw Error(Errc::ShapeMismatch, "sample grid " + to_string(s.pattern.grid()) + " does not match network " +
                                                 to_string(spec.input_grid));
        }
        (s.split == Split::train ? train : val).push_back(&s);
    }
    if (train.empty()) throw Error(Errc::EmptyDataset, "no training samples");

    const nn::Network net(spec);
    TrainResult result;
    result.final_params = nn::init_params(spec, config.seed);
    std::vector<double>& params = result.final_params.values;
    OptimizerState opt;
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(train.size());

    for (long epoch = 0; epoch < config.schedule.total_epochs; ++epoch) {
        const OptimizerKind kind = config.schedule.optimizer_at(epoch);
        const double lr = config.schedule.lr_at(epoch);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        double train_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<double> grads(params.size(), 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                auto sg = supervised_sample(net, params, *train[order[k]], config.weights, config.phase_scale);
                if (sg.fallback) warn_fallback(result.pearson_fallbacks, "supervised_train");
                train_sum += sg.terms.total;
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += sg.grads[i];
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (double& g : grads) g *= inv;
            opt.step(kind, lr, params, grads);
        }

        EpochLosses e{epoch, train_sum / static_cast<double>(train.size()), 0.0, lr, kind};
        check_finite_loss(e.train, "supervised training");
        // Without a validation split the checkpoint is chosen on the post-epoch training loss.
        e.validation = evaluate_supervised(net, params, val.empty() ? train : val, config.weights, config.phase_scale);
        check_finite_loss(e.validation, "validation");
        result.curve.push_back(e);
        if (result.best_epoch < 0 || e.validation < result.best_loss) {
            result.best_epoch = epoch;
            result.best_loss = e.validation;
            result.params = result.final_params;
        }
        if (on_epoch) on_epoch(e);
    }
    return result;
}

Prediction predict(const nn::NetworkParams& params, const DiffractionPattern& pattern, double phase_scale) {
    const nn::Network net(params.spec);
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = net.forward(pattern.amplitude, params.values);
    Prediction p{polar(out.amplitude, out.phase, phase_scale), 0.0};
    p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return p;
}

std::string RefineResult::trace_csv() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "epoch,loss,beta1,lr,optimizer\n";
    for (const auto& r : trace) {
        ss << r.epoch << ',' << r.loss << ',' << r.beta1 << ',' << r.lr << ',' << to_string(r.optimizer) << '\n';
    }
    return ss.str();
}

RefineProbe refine_loss_and_grad(const nn::Network& net, std::span<const double> params,
                                 const DiffractionPattern& pattern, double beta1, double beta2, double phase_scale) {
    RefineProbe p;
    nn::TapeState tape;
    p.output = net.forward(pattern.amplitude, params, &tape);
    p.chain = diffraction_chain(p.output.amplitude, p.output.phase, phase_scale, pattern.grid());
    const auto lg = unsupervised_loss_grad(p.chain.amplitude, pattern.amplitude, beta1, beta2, true);
    p.loss = lg.value;
    p.pearson = lg.pearson;
    p.chi2 = lg.chi2;
    p.pearson_fallback = lg.pearson_fallback;
    const auto og = diffraction_chain_backward(p.chain, lg.d_predicted, p.output.amplitude, p.output.phase, phase_scale);
    p.grads = net.backward(og.d_amp, og.d_phase, params, tape);
    return p;
}

RefineResult unsupervised_refine(const DiffractionPattern& pattern, const RefineConfig& config,
                                 const std::function<void(const RefineTraceRow&)>& on_epoch) {
    config.schedule.validate();
    config.weibull.validate();
    RefineResult result;
    if (const auto* t = std::get_if<TransferInit>(&config.init)) {
        result.params = t->params;
    } else {
        result.params = nn::init_params(config.spec, std::get<RandomInit>(config.init).seed);
    }
    if (result.params.spec.input_grid != pattern.grid()) {
        throw Error(Errc::ShapeMismatch, "network input " + to_string(result.params.spec.input_grid) +
                                             " does not match pattern " + to_string(pattern.grid()));
    }
    const nn::Network net(result.params.spec);
    std::vector<double>& params = result.params.values;
    OptimizerState opt;
    result.trace.reserve(static_cast<std::size_t>(config.schedule.total_epochs));

    for (long epoch = 0; epoch < config.schedule.total_epochs; ++epoch) {
        const double beta1 = weibull_beta1(epoch, config.weibull);
        auto probe = refine_loss_and_grad(net, params, pattern, beta1, config.beta2, config.phase_scale);
        if (probe.pearson_fallback) warn_fallback(result.pearson_fallbacks, "unsupervised_refine");
        if (!std::isfinite(probe.loss)) {
            throw Error(Errc::NonFiniteLoss, "loss became non-finite at epoch " + std::to_string(epoch));
        }
        RefineTraceRow row{epoch, probe.loss, beta1, config.schedule.lr_at(epoch), config.schedule.optimizer_at(epoch),
                           probe.pearson, probe.chi2};
        result.trace.push_back(row);
        if (on_epoch) on_epoch(row);
        opt.step(row.optimizer, row.lr, params, probe.grads);
    }

    const double beta1 = weibull_beta1(config.schedule.total_epochs, config.weibull);
    const auto out = net.forward(pattern.amplitude, params);
    result.object = polar(out.amplitude, out.phase, config.phase_scale);
    result.predicted_amplitude = modulus(fft_forward(zero_pad_center(result.object, pattern.grid())));
    const auto lg = unsupervised_loss_grad(result.predicted_amplitude, pattern.amplitude, beta1, config.beta2, true);
    if (!std::isfinite(lg.value)) throw Error(Errc::NonFiniteLoss, "final loss is non-finite");
    result.final_loss = lg.value;
    result.final_chi2 = lg.chi2;
    result.final_pearson = lg.pearson;
    return result;
}

}  // namespace cxdi
