#include "cxdi/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace cxdi::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// dst(c, r) = src(c, r + offset), zero where r + offset leaves the grid.
void gather_shifted(const Tensor& src, int ox, int oy, int oz, double* dst) {
    const int x0 = std::max(0, -ox), x1 = std::min(src.nx, src.nx - ox);
    for (int c = 0; c < src.channels; ++c)
        for (int z = 0; z < src.nz; ++z)
            for (int y = 0; y < src.ny; ++y) {
                double* row = dst + src.index(c, 0, y, z);
                const int zs = z + oz, ys = y + oy;
                if (zs < 0 || zs >= src.nz || ys < 0 || ys >= src.ny || x0 >= x1) {
                    std::fill(row, row + src.nx, 0.0);
                    continue;
                }
                const double* in = src.data.data() + src.index(c, 0, ys, zs);
                std::fill(row, row + x0, 0.0);
                std::copy(in + x0 + ox, in + x1 + ox, row + x0);
                std::fill(row + x1, row + src.nx, 0.0);
            }
}

// dst(c, r + offset) += src(c, r) for in-grid targets. Adjoint of gather_shifted.
void scatter_shifted(const double* src, int ox, int oy, int oz, Tensor& dst) {
    const int x0 = std::max(0, -ox), x1 = std::min(dst.nx, dst.nx - ox);
    if (x0 >= x1) return;
    for (int c = 0; c < dst.channels; ++c)
        for (int z = 0; z < dst.nz; ++z)
            for (int y = 0; y < dst.ny; ++y) {
                const int zs = z + oz, ys = y + oy;
                if (zs < 0 || zs >= dst.nz || ys < 0 || ys >= dst.ny) continue;
                const double* row = src + dst.index(c, 0, y, z);
                double* out = dst.data.data() + dst.index(c, 0, ys, zs);
                for (int x = x0; x < x1; ++x) out[x + ox] += row[x];
            }
}

void check_kernel(const Extent3& k) {
    for (int e : k)
        if (e != 1 && e != 3) throw Error(Errc::ShapeMismatch, "kernel extents must be 1 or 3");
}

// Copies tap (tx, ty, tz) of [out][in][kz][ky][kx] weights into an out x in matrix.
RowMat tap_matrix(std::span<const double> w, int cout, int cin, const Extent3& k, int tx, int ty, int tz) {
    RowMat m(cout, cin);
    const int taps = k[0] * k[1] * k[2];
    const int t = (tz * k[1] + ty) * k[0] + tx;
    for (int o = 0; o < cout; ++o)
        for (int i = 0; i < cin; ++i) m(o, i) = w[static_cast<std::size_t>(o * cin + i) * taps + t];
    return m;
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
                      int out_channels, const Extent3& kernel) {
    check_kernel(kernel);
    const int cin = input.channels;
    if (weights.size() != conv_weight_count(cin, out_channels, kernel) ||
        bias.size() != static_cast<std::size_t>(out_channels)) {
        throw Error(Errc::ShapeMismatch, "convolution parameters do not match channel counts");
    }
    const auto v = static_cast<Eigen::Index>(input.spatial());
    Tensor out(out_channels, input.nx, input.ny, input.nz);
    MatMap y(out.data.data(), out_channels, v);
    for (int o = 0; o < out_channels; ++o) y.row(o).setConstant(bias[o]);

    std::vector<double> shifted(input.size());
    for (int tz = 0; tz < kernel[2]; ++tz)
        for (int ty = 0; ty < kernel[1]; ++ty)
            for (int tx = 0; tx < kernel[0]; ++tx) {
                const int ox = tx - kernel[0] / 2, oy = ty - kernel[1] / 2, oz = tz - kernel[2] / 2;
                const double* src = input.data.data();
                if (ox != 0 || oy != 0 || oz != 0) {
                    gather_shifted(input, ox, oy, oz, shifted.data());
                    src = shifted.data();
                }
                const RowMat w = tap_matrix(weights, out_channels, cin, kernel, tx, ty, tz);
                y.noalias() += w * ConstMatMap(src, cin, v);
            }
    return out;
}

ConvGrads conv3d_backward(const Tensor& grad_out, const Tensor& input, std::span<const double> weights,
                          const Extent3& kernel) {
    check_kernel(kernel);
    const int cin = input.channels, cout = grad_out.channels;
    if (grad_out.nx != input.nx || grad_out.ny != input.ny || grad_out.nz != input.nz ||
        weights.size() != conv_weight_count(cin, cout, kernel)) {
        throw Error(Errc::ShapeMismatch, "convolution backward shapes disagree");
    }
    const auto v = static_cast<Eigen::Index>(input.spatial());
    const int taps = kernel[0] * kernel[1] * kernel[2];
    ConvGrads g{Tensor(cin, input.nx, input.ny, input.nz), std::vector<double>(weights.size(), 0.0),
                std::vector<double>(cout, 0.0)};
    const ConstMatMap gy(grad_out.data.data(), cout, v);
    // Plain loop: Eigen's vectorized sum peels by buffer address, which breaks run-to-run reproducibility.
    for (int o = 0; o < cout; ++o) {
        const double* row = grad_out.data.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(v);
        double s = 0.0;
        for (Eigen::Index j = 0; j < v; ++j) s += row[j];
        g.bias[o] = s;
    }

    std::vector<double> shifted(input.size());
    RowMat gs(cin, v);
    for (int tz = 0; tz < kernel[2]; ++tz)
        for (int ty = 0; ty < kernel[1]; ++ty)
            for (int tx = 0; tx < kernel[0]; ++tx) {
                const int ox = tx - kernel[0] / 2, oy = ty - kernel[1] / 2, oz = tz - kernel[2] / 2;
                const bool centre = ox == 0 && oy == 0 && oz == 0;
                const double* src = input.data.data();
                if (!centre) {
                    gather_shifted(input, ox, oy, oz, shifted.data());
                    src = shifted.data();
                }
                const RowMat gw = gy * ConstMatMap(src, cin, v).transpose();
                const int t = (tz * kernel[1] + ty) * kernel[0] + tx;
                for (int o = 0; o < cout; ++o)
                    for (int i = 0; i < cin; ++i) g.weights[static_cast<std::size_t>(o * cin + i) * taps + t] = gw(o, i);

                const RowMat w = tap_matrix(weights, cout, cin, kernel, tx, ty, tz);
                if (centre) {
                    MatMap(g.input.data.data(), cin, v).noalias() += w.transpose() * gy;
                } else {
                    gs.noalias() = w.transpose() * gy;
                    scatter_shifted(gs.data(), ox, oy, oz, g.input);
                }
            }
    return g;
}

Tensor lrelu_forward(const Tensor& input, double slope) {
    Tensor out = input;
    for (double& x : out.data)
        if (x <= 0.0) x *= slope;
    return out;
}

Tensor lrelu_backward(const Tensor& grad_out, const Tensor& input, double slope) {
    if (!grad_out.same_shape(input)) throw Error(Errc::ShapeMismatch, "activation backward shapes disagree");
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (input.data[i] <= 0.0) g.data[i] *= slope;
    return g;
}

Tensor norm_forward(const Tensor& input, std::span<const double> gamma, std::span<const double> beta,
                    NormCache* cache) {
    const auto nch = static_cast<std::size_t>(input.channels);
    if (gamma.size() != nch || beta.size() != nch) throw Error(Errc::ShapeMismatch, "normalization parameter count");
    const std::size_t n = input.spatial();
    Tensor out(input.channels, input.nx, input.ny, input.nz);
    if (cache) {
        cache->normalized = Tensor(input.channels, input.nx, input.ny, input.nz);
        cache->inv_std.assign(nch, 0.0);
    }
    for (int c = 0; c < input.channels; ++c) {
        const double* x = input.channel(c);
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += x[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
        double* y = out.channel(c);
        double* xh = cache ? cache->normalized.channel(c) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const double h = (x[i] - mean) * inv;
            if (xh) xh[i] = h;
            y[i] = gamma[c] * h + beta[c];
        }
        if (cache) cache->inv_std[c] = inv;
    }
    return out;
}

NormGrads norm_backward(const Tensor& grad_out, const NormCache& cache, std::span<const double> gamma) {
    const Tensor& xh = cache.normalized;
    if (!grad_out.same_shape(xh)) throw Error(Errc::ShapeMismatch, "normalization backward shapes disagree");
    const std::size_t n = xh.spatial();
    const double dn = static_cast<double>(n);
    NormGrads g{Tensor(xh.channels, xh.nx, xh.ny, xh.nz), std::vector<double>(xh.channels, 0.0),
                std::vector<double>(xh.channels, 0.0)};
    for (int c = 0; c < xh.channels; ++c) {
        const double* dy = grad_out.channel(c);
        const double* h = xh.channel(c);
        double sum_dy = 0.0, sum_dy_h = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy[i];
            sum_dy_h += dy[i] * h[i];
        }
        g.beta[c] = sum_dy;
        g.gamma[c] = sum_dy_h;
        // dxhat = gamma * dy; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)).
        const double scale = gamma[c] * cache.inv_std[c];
        double* dx = g.input.channel(c);
        for (std::size_t i = 0; i < n; ++i) dx[i] = scale * (dy[i] - sum_dy / dn - h[i] * sum_dy_h / dn);
    }
    return g;
}

Tensor maxpool2_forward(const Tensor& input, std::vector<std::uint32_t>* argmax) {
    if (input.nx % 2 || input.ny % 2 || input.nz % 2) throw Error(Errc::OddExtent, "max pooling needs even extents");
    Tensor out(input.channels, input.nx / 2, input.ny / 2, input.nz / 2);
    if (argmax) argmax->assign(out.size(), 0);
    std::size_t k = 0;
    for (int c = 0; c < out.channels; ++c)
        for (int z = 0; z < out.nz; ++z)
            for (int y = 0; y < out.ny; ++y)
                for (int x = 0; x < out.nx; ++x, ++k) {
                    std::size_t best = input.index(c, 2 * x, 2 * y, 2 * z);
                    for (int d = 1; d < 8; ++d) {
                        const std::size_t i = input.index(c, 2 * x + (d & 1), 2 * y + ((d >> 1) & 1), 2 * z + (d >> 2));
                        if (input.data[i] > input.data[best]) best = i;
                    }
                    out.data[k] = input.data[best];
                    if (argmax) (*argmax)[k] = static_cast<std::uint32_t>(best);
                }
    return out;
}

Tensor maxpool2_backward(const Tensor& grad_out, std::span<const std::uint32_t> argmax, const Tensor& input_shape) {
    if (argmax.size() != grad_out.size()) throw Error(Errc::ShapeMismatch, "pooling routes do not match gradient");
    Tensor g(input_shape.channels, input_shape.nx, input_shape.ny, input_shape.nz);
    for (std::size_t k = 0; k < grad_out.size(); ++k) g.data[argmax[k]] += grad_out.data[k];
    return g;
}

namespace {

struct AxisTaps {
    std::vector<int> i0, i1;
    std::vector<double> w0, w1;
};

AxisTaps linear_taps(int n) {
    AxisTaps t;
    for (int o = 0; o < 2 * n; ++o) {
        const double src = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
        const int a = std::min(static_cast<int>(src), n - 1);
        const int b = std::min(a + 1, n - 1);
        const double f = src - a;
        t.i0.push_back(a);
        t.i1.push_back(b);
        t.w0.push_back(1.0 - f);
        t.w1.push_back(f);
    }
    return t;
}

}  // namespace

Tensor upsample2_forward(const Tensor& input, UpsampleMode mode) {
    Tensor out(input.channels, input.nx * 2, input.ny * 2, input.nz * 2);
    if (mode == UpsampleMode::nearest) {
        for (int c = 0; c < out.channels; ++c)
            for (int z = 0; z < out.nz; ++z)
                for (int y = 0; y < out.ny; ++y) {
                    const double* src = input.data.data() + input.index(c, 0, y / 2, z / 2);
                    double* dst = out.data.data() + out.index(c, 0, y, z);
                    for (int x = 0; x < out.nx; ++x) dst[x] = src[x / 2];
                }
        return out;
    }
    const AxisTaps tx = linear_taps(input.nx), ty = linear_taps(input.ny), tz = linear_taps(input.nz);
    for (int c = 0; c < out.channels; ++c)
        for (int z = 0; z < out.nz; ++z)
            for (int y = 0; y < out.ny; ++y)
                for (int x = 0; x < out.nx; ++x) {
                    double acc = 0.0;
                    for (int d = 0; d < 8; ++d) {
                        const bool bx = d & 1, by = (d >> 1) & 1, bz = d >> 2;
                        const double w = (bx ? tx.w1[x] : tx.w0[x]) * (by ? ty.w1[y] : ty.w0[y]) *
                                         (bz ? tz.w1[z] : tz.w0[z]);
                        acc += w * input.data[input.index(c, bx ? tx.i1[x] : tx.i0[x], by ? ty.i1[y] : ty.i0[y],
                                                          bz ? tz.i1[z] : tz.i0[z])];
                    }
                    out.data[out.index(c, x, y, z)] = acc;
                }
    return out;
}

Tensor upsample2_backward(const Tensor& grad_out, UpsampleMode mode, const Tensor& input_shape) {
    if (grad_out.nx != 2 * input_shape.nx || grad_out.ny != 2 * input_shape.ny || grad_out.nz != 2 * input_shape.nz ||
        grad_out.channels != input_shape.channels) {
        throw Error(Errc::ShapeMismatch, "upsampling backward shapes disagree");
    }
    Tensor g(input_shape.channels, input_shape.nx, input_shape.ny, input_shape.nz);
    if (mode == UpsampleMode::nearest) {
        for (int c = 0; c < grad_out.channels; ++c)
            for (int z = 0; z < grad_out.nz; ++z)
                for (int y = 0; y < grad_out.ny; ++y) {
                    const double* src = grad_out.data.data() + grad_out.index(c, 0, y, z);
                    double* dst = g.data.data() + g.index(c, 0, y / 2, z / 2);
                    for (int x = 0; x < grad_out.nx; ++x) dst[x / 2] += src[x];
                }
        return g;
    }
    const AxisTaps tx = linear_taps(g.nx), ty = linear_taps(g.ny), tz = linear_taps(g.nz);
    for (int c = 0; c < grad_out.channels; ++c)
        for (int z = 0; z < grad_out.nz; ++z)
            for (int y = 0; y < grad_out.ny; ++y)
                for (int x = 0; x < grad_out.nx; ++x) {
                    const double up = grad_out.data[grad_out.index(c, x, y, z)];
                    for (int d = 0; d < 8; ++d) {
                        const bool bx = d & 1, by = (d >> 1) & 1, bz = d >> 2;
                        const double w = (bx ? tx.w1[x] : tx.w0[x]) * (by ? ty.w1[y] : ty.w0[y]) *
                                         (bz ? tz.w1[z] : tz.w0[z]);
                        g.data[g.index(c, bx ? tx.i1[x] : tx.i0[x], by ? ty.i1[y] : ty.i0[y], bz ? tz.i1[z] : tz.i0[z])] +=
                            w * up;
                    }
                }
    return g;
}

}  // namespace cxdi::nn
