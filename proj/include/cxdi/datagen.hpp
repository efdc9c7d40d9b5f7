#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cxdi/volume.hpp"

namespace cxdi {

/// Superellipsoid semi-axes (voxels) and roundedness exponents.
struct SuperellipsoidParams {
    double a = 1.0, b = 1.0, c = 1.0;
    double n = 1.0, e = 1.0;

    void validate(const Grid3& grid) const;
};

struct PhaseFieldParams {
    double lx = 1.0, ly = 1.0, lz = 1.0;  // correlation lengths in voxels
    std::uint64_t seed = 0;
};

struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    static Quaternion axis_angle(double ax, double ay, double az, double angle);
    double norm() const;
};

/// 1 inside ((|x/a|^(2/e) + |y/b|^(2/e))^(e/n) + |z/c|^(2/n)) <= 1, offsets measured from the center voxel.
RealVolume superellipsoid_support(const SuperellipsoidParams& p, const Grid3& grid);

/// Gaussian-correlated random field restricted to `support`, rescaled to span [0, 1] inside it.
RealVolume gaussian_phase_field(const PhaseFieldParams& p, const RealVolume& support);

/// Trilinear resampling under rotation `q` about the center voxel. Out-of-grid samples read as 0.
ComplexVolume random_rotation(const ComplexVolume& v, const Quaternion& q);

/// Uniform rotation over SO(3) from a normalized Gaussian 4-vector.
template <class Rng>
Quaternion sample_rotation(Rng& rng);

/// |fft(particle)|. The particle must vanish outside the central half-box on every axis.
DiffractionPattern synthesize_diffraction(const ComplexVolume& particle, std::string source_tag = "synthetic");

bool within_central_half_box(const ComplexVolume& v);

struct Range {
    double lo = 0.0, hi = 0.0;
};

struct ParamRanges {
    Range axes;       // a, b, c
    Range exponents;  // n, e
    Range correlation;  // Lx, Ly, Lz
    double phase_scale = 1.0;

    static ParamRanges defaults(const Grid3& grid);
    void validate(const Grid3& grid) const;
};

enum class Split { train, validation };

struct SampleRecord {
    std::size_t index = 0;
    ComplexVolume particle;      // ground truth on the pattern grid
    DiffractionPattern pattern;
    SuperellipsoidParams shape;
    PhaseFieldParams phase;
    Quaternion rotation;
    std::uint64_t seed = 0;      // per-record stream seed
    int attempts = 1;            // draws needed to fit the central half-box after rotation
    double phase_scale = 1.0;
    Split split = Split::train;

    /// Ground-truth amplitude and phase on the half-size grid the network predicts.
    RealVolume target_amplitude() const;
    RealVolume target_phase() const;
};

/// One record with its own RNG stream derived from (seed, index).
SampleRecord generate_sample(const Grid3& grid, const ParamRanges& ranges, std::uint64_t seed, std::size_t index,
                             std::size_t count);

/// Calls `sink` with records 0..count-1 in order. The last floor(count/20) records form the validation split.
void generate_dataset(std::size_t count, const Grid3& grid, const ParamRanges& ranges, std::uint64_t seed,
                      const std::function<void(SampleRecord&&)>& sink);
std::vector<SampleRecord> generate_dataset(std::size_t count, const Grid3& grid, const ParamRanges& ranges,
                                           std::uint64_t seed);

std::size_t validation_count(std::size_t count);

/// Writes sample_{i}_particle.cxv / sample_{i}_pattern.cxv and manifest.json into `dir`.
void write_dataset(const std::filesystem::path& dir, std::size_t count, const Grid3& grid, const ParamRanges& ranges,
                   std::uint64_t seed);
std::vector<SampleRecord> read_dataset(const std::filesystem::path& dir);

}  // namespace cxdi

#include <cmath>
#include <random>

namespace cxdi {

template <class Rng>
Quaternion sample_rotation(Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Quaternion q;
    double n = 0.0;
    do {
        q = {gauss(rng), gauss(rng), gauss(rng), gauss(rng)};
        n = q.norm();
    } while (n < 1e-6);
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

}  // namespace cxdi
