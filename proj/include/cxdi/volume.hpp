#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cxdi/error.hpp"

namespace cxdi {

using cdouble = std::complex<double>;

/// Voxel extents of a 3D grid. Every axis is even and at least 4.
struct Grid3 {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    Grid3() = default;
    Grid3(int x, int y, int z);
    static Grid3 cube(int n) { return {n, n, n}; }

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    std::size_t index(int x, int y, int z) const noexcept {
        return (static_cast<std::size_t>(z) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(nx) +
               static_cast<std::size_t>(x);
    }
    Grid3 half() const { return {nx / 2, ny / 2, nz / 2}; }
    Grid3 twice() const { return {nx * 2, ny * 2, nz * 2}; }

    friend bool operator==(const Grid3&, const Grid3&) = default;
};

std::string to_string(const Grid3& g);

/// Dense 3D array, row-major with x fastest.
template <class T>
class Volume {
public:
    using value_type = T;

    Volume() = default;
    explicit Volume(Grid3 grid, T fill = T{}) : grid_(grid), data_(grid.size(), fill) {}
    Volume(Grid3 grid, std::vector<T> data) : grid_(grid), data_(std::move(data)) {
        if (data_.size() != grid_.size()) {
            throw Error(Errc::DimensionMismatch, "data length does not match grid " + to_string(grid_));
        }
    }

    const Grid3& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }
    T& at(int x, int y, int z) noexcept { return data_[grid_.index(x, y, z)]; }
    const T& at(int x, int y, int z) const noexcept { return data_[grid_.index(x, y, z)]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    Grid3 grid_;
    std::vector<T> data_;
};

using ComplexVolume = Volume<cdouble>;
using RealVolume = Volume<double>;

/// Measured or simulated diffraction amplitudes sqrt(I), zero frequency at the center voxel.
struct DiffractionPattern {
    RealVolume amplitude;
    std::string source_tag;

    DiffractionPattern() = default;
    DiffractionPattern(RealVolume amp, std::string tag);

    const Grid3& grid() const noexcept { return amplitude.grid(); }
};

/// Centered, unnormalized forward DFT. Zero frequency lands on voxel (nx/2, ny/2, nz/2).
ComplexVolume fft_forward(const ComplexVolume& v);
/// Centered inverse DFT with 1/N normalization; exact inverse of fft_forward.
ComplexVolume fft_inverse(const ComplexVolume& v);

RealVolume modulus(const ComplexVolume& v);
RealVolume phase(const ComplexVolume& v);
ComplexVolume to_complex(const RealVolume& v);
ComplexVolume polar(const RealVolume& amplitude, const RealVolume& phase, double phase_scale = 1.0);

/// Places v at the center of a larger grid; offsets (target - src) / 2 per axis.
ComplexVolume zero_pad_center(const ComplexVolume& v, const Grid3& target);
RealVolume zero_pad_center(const RealVolume& v, const Grid3& target);
/// Adjoint of zero_pad_center: extracts the central block of extent `target`.
ComplexVolume crop_center(const ComplexVolume& v, const Grid3& target);
RealVolume crop_center(const RealVolume& v, const Grid3& target);

/// Periodic shift: out(r) = v(r - shift).
ComplexVolume circular_shift(const ComplexVolume& v, int sx, int sy, int sz);
/// Point reflection through the center voxel: out(r) = v(-r) about (nx/2, ny/2, nz/2).
ComplexVolume reflect_center(const ComplexVolume& v);

double energy(const ComplexVolume& v);
bool all_finite(const ComplexVolume& v);
bool all_finite(const RealVolume& v);

}  // namespace cxdi
