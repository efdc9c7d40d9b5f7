#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cxdi/error.hpp"

namespace cxdi::nn {

/// Channel-major activation tensor; each channel is a 3D block with x fastest.
struct Tensor {
    int channels = 0;
    int nx = 0, ny = 0, nz = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int x, int y, int z, double fill = 0.0)
        : channels(c), nx(x), ny(y), nz(z), data(static_cast<std::size_t>(c) * x * y * z, fill) {}

    std::size_t spatial() const noexcept { return static_cast<std::size_t>(nx) * ny * nz; }
    std::size_t size() const noexcept { return data.size(); }
    std::size_t index(int c, int x, int y, int z) const noexcept {
        return ((static_cast<std::size_t>(c) * nz + z) * ny + y) * nx + x;
    }
    double* channel(int c) noexcept { return data.data() + static_cast<std::size_t>(c) * spatial(); }
    const double* channel(int c) const noexcept { return data.data() + static_cast<std::size_t>(c) * spatial(); }
    bool same_shape(const Tensor& o) const noexcept {
        return channels == o.channels && nx == o.nx && ny == o.ny && nz == o.nz;
    }
};

/// Kernel extents (kx, ky, kz); each is 1 or 3.
using Extent3 = std::array<int, 3>;

inline std::size_t conv_weight_count(int in_channels, int out_channels, const Extent3& k) {
    return static_cast<std::size_t>(in_channels) * out_channels * k[0] * k[1] * k[2];
}

/// Same-padded 3D cross-correlation with bias. Weights are laid out [out][in][kz][ky][kx].
Tensor conv3d_forward(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
                      int out_channels, const Extent3& kernel);

struct ConvGrads {
    Tensor input;
    std::vector<double> weights;
    std::vector<double> bias;
};

ConvGrads conv3d_backward(const Tensor& grad_out, const Tensor& input, std::span<const double> weights,
                          const Extent3& kernel);

/// x for x > 0, slope * x otherwise. slope = 0 gives ReLU.
Tensor lrelu_forward(const Tensor& input, double slope);
Tensor lrelu_backward(const Tensor& grad_out, const Tensor& input, double slope);

inline constexpr double kNormEpsilon = 1e-5;

/// Statistics kept from a normalization forward pass.
struct NormCache {
    Tensor normalized;             // (x - mean) / sqrt(var + eps)
    std::vector<double> inv_std;   // per channel
};

/// Per-sample, per-channel normalization over the spatial dims followed by gamma * xhat + beta.
Tensor norm_forward(const Tensor& input, std::span<const double> gamma, std::span<const double> beta,
                    NormCache* cache);

struct NormGrads {
    Tensor input;
    std::vector<double> gamma;
    std::vector<double> beta;
};

NormGrads norm_backward(const Tensor& grad_out, const NormCache& cache, std::span<const double> gamma);

/// 2x2x2 max pooling. `argmax` receives, per output element, the flat input index it came from.
Tensor maxpool2_forward(const Tensor& input, std::vector<std::uint32_t>* argmax);
Tensor maxpool2_backward(const Tensor& grad_out, std::span<const std::uint32_t> argmax, const Tensor& input_shape);

enum class UpsampleMode { nearest, trilinear };

/// Factor-2 upsampling: nearest replicates each voxel into a 2x2x2 block; trilinear uses
/// half-pixel centers with edge clamping.
Tensor upsample2_forward(const Tensor& input, UpsampleMode mode);
Tensor upsample2_backward(const Tensor& grad_out, UpsampleMode mode, const Tensor& input_shape);

}  // namespace cxdi::nn
