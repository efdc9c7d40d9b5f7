#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cxdi/datagen.hpp"
#include "cxdi/metrics.hpp"
#include "cxdi/network.hpp"

namespace cxdi {

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind k) noexcept;

/// Plain gradient descent: theta -= lr * g.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

/// Bias-corrected ADAM. Moments are sized on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

/// Alternating ADAM/SGD with stepwise learning-rate decay. ADAM runs first.
struct TrainSchedule {
    long total_epochs = 100;
    long switch_every = 25;
    double lr0 = 0.01;
    double lr_decay = 0.95;
    long decay_every = 25;

    static TrainSchedule supervised_default() { return {100, 25, 0.01, 0.95, 25}; }
    static TrainSchedule refine_default() { return {40000, 200, 0.006, 0.95, 200}; }

    OptimizerKind optimizer_at(long epoch) const;
    double lr_at(long epoch) const;
    void validate() const;
};

/// Optimizer pair whose ADAM moments persist across switches.
struct OptimizerState {
    AdamState adam;

    void step(OptimizerKind kind, double lr, std::span<double> params, std::span<const double> grads);
};

struct TrainConfig {
    TrainSchedule schedule = TrainSchedule::supervised_default();
    SupervisedWeights weights;
    int batch_size = 8;
    double phase_scale = 1.0;
    std::uint64_t seed = 0;
};

struct EpochLosses {
    long epoch = 0;
    double train = 0.0;
    double validation = 0.0;
    double lr = 0.0;
    OptimizerKind optimizer = OptimizerKind::adam;
};

struct TrainResult {
    nn::NetworkParams params;  // best-validation checkpoint
    nn::NetworkParams final_params;
    std::vector<EpochLosses> curve;
    long best_epoch = -1;
    double best_loss = 0.0;
    long pearson_fallbacks = 0;

    std::string curve_csv() const;
};

/// l_s of `params` averaged over `samples`.
double evaluate_supervised(const nn::Network& net, std::span<const double> params,
                           std::span<const SampleRecord* const> samples, const SupervisedWeights& w,
                           double phase_scale);

/// Minimizes l_s over the train split. Without validation records the train loss picks the checkpoint.
TrainResult supervised_train(std::span<const SampleRecord> dataset, const nn::NetworkSpec& spec,
                             const TrainConfig& config,
                             const std::function<void(const EpochLosses&)>& on_epoch = {});

struct Prediction {
    ComplexVolume object;  // half-size grid
    double seconds = 0.0;
};

Prediction predict(const nn::NetworkParams& params, const DiffractionPattern& pattern, double phase_scale = 1.0);

struct RandomInit {
    std::uint64_t seed = 0;
};
struct TransferInit {
    nn::NetworkParams params;
};

struct RefineConfig {
    nn::NetworkSpec spec;  // used by RandomInit; TransferInit carries its own spec
    std::variant<RandomInit, TransferInit> init = RandomInit{};
    TrainSchedule schedule = TrainSchedule::refine_default();
    WeibullSchedule weibull;
    double beta2 = 1.0;
    double phase_scale = 1.0;
};

struct RefineTraceRow {
    long epoch = 0;
    double loss = 0.0;
    double beta1 = 0.0;
    double lr = 0.0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double pearson = 0.0;
    double chi2 = 0.0;
};

struct RefineResult {
    nn::NetworkParams params;
    ComplexVolume object;            // final prediction on the half-size grid
    RealVolume predicted_amplitude;  // |fft(pad(object))| on the pattern grid
    double final_loss = 0.0;         // l_u with beta1 at the final epoch
    double final_chi2 = 0.0;
    double final_pearson = 0.0;
    std::vector<RefineTraceRow> trace;
    long pearson_fallbacks = 0;

    std::string trace_csv() const;
};

struct RefineProbe {
    double loss = 0.0;
    double pearson = 0.0;
    double chi2 = 0.0;
    bool pearson_fallback = false;
    std::vector<double> grads;
    nn::NetworkOutput output;
    DiffractionChain chain;
};

/// l_u and its parameter gradient, back-propagated through |FFT|, zero padding, and the network.
RefineProbe refine_loss_and_grad(const nn::Network& net, std::span<const double> params,
                                 const DiffractionPattern& pattern, double beta1, double beta2, double phase_scale);

/// Fits the network to a single pattern with l_u; beta1 follows the Weibull schedule.
RefineResult unsupervised_refine(const DiffractionPattern& pattern, const RefineConfig& config,
                                 const std::function<void(const RefineTraceRow&)>& on_epoch = {});

}  // namespace cxdi
