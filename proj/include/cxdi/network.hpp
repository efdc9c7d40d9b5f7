#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cxdi/layers.hpp"
#include "cxdi/volume.hpp"

namespace cxdi::nn {

enum class LayerKind { conv, lrelu, relu, norm, maxpool2, upsample2 };

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    int in_channels = 0;
    int out_channels = 0;
    Extent3 kernel{1, 1, 1};
    double lrelu_slope = 0.01;
    UpsampleMode upsample = UpsampleMode::nearest;
    std::size_t param_offset = 0;

    std::size_t param_count() const;
};

/// Encoder-decoder topology. Each encoder stage is a 3x3x3 conv block followed by a factorized
/// (3x1x1, 1x3x1, 1x1x3) conv block, both conv + LReLU + norm, then 2x max pooling. Two decoders
/// (amplitude, phase) mirror the encoder with upsampling but stop one stage early, so they emit
/// half the input extent, and finish with a 3x3x3 conv + ReLU.
struct NetworkSpec {
    Grid3 input_grid = Grid3::cube(32);
    std::vector<int> encoder_widths{16, 32, 64};
    double lrelu_slope = 0.01;
    UpsampleMode upsample = UpsampleMode::nearest;

    static NetworkSpec desk(int n = 32);
    static NetworkSpec paper_scale();

    Grid3 output_grid() const { return input_grid.half(); }
    /// Widths of the decoder stages, bottleneck side first.
    std::vector<int> decoder_widths() const;
    void validate() const;

    std::string to_json() const;
    static NetworkSpec from_json(const std::string& text);
    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct NetworkParams {
    NetworkSpec spec;
    std::uint64_t seed = 0;
    std::vector<double> values;
};

/// Cached activations of a training-mode forward pass.
struct LayerTape {
    Tensor input;
    NormCache norm;
    std::vector<std::uint32_t> argmax;
};

struct TapeState {
    std::vector<LayerTape> encoder;
    std::vector<LayerTape> amplitude_head;
    std::vector<LayerTape> phase_head;

    bool empty() const { return encoder.empty(); }
};

struct NetworkOutput {
    RealVolume amplitude;
    RealVolume phase;
};

class Network {
public:
    explicit Network(NetworkSpec spec);

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::size_t param_count() const noexcept { return param_count_; }
    const std::vector<LayerSpec>& encoder() const noexcept { return encoder_; }
    const std::vector<LayerSpec>& amplitude_head() const noexcept { return amp_head_; }
    const std::vector<LayerSpec>& phase_head() const noexcept { return phase_head_; }
    /// All layers in parameter declaration order.
    std::vector<LayerSpec> layers() const;

    /// Input amplitudes are scaled by their maximum before the first layer. Pass a tape to
    /// record what backward needs; outputs are identical either way.
    NetworkOutput forward(const RealVolume& input, std::span<const double> params, TapeState* tape = nullptr) const;

    /// Parameter gradient for upstream gradients on both outputs.
    std::vector<double> backward(const RealVolume& d_amplitude, const RealVolume& d_phase,
                                 std::span<const double> params, const TapeState& tape) const;

private:
    NetworkSpec spec_;
    std::vector<LayerSpec> encoder_, amp_head_, phase_head_;
    std::size_t param_count_ = 0;
};

/// Kernels ~ N(0, 2 / ((1 + slope^2) fan_in)), biases 0, gamma 1, beta 0.
NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);

void save_params(const NetworkParams& p, const std::filesystem::path& path);
NetworkParams load_params(const std::filesystem::path& path);
std::string encode_params(const NetworkParams& p);
NetworkParams decode_params(std::string_view bytes);

}  // namespace cxdi::nn
