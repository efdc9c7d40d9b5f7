#include "cxdi/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "cxdi/volume_io.hpp"
#include "json.hpp"

namespace cxdi {

namespace {

constexpr int kMaxShapeAttempts = 64;

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_matrix(const Quaternion& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

// Lattice-preserving rotations produce coordinates a few ulps off integers.
double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

double draw(std::mt19937_64& rng, const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

std::mt19937_64 record_stream(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

std::string sample_name(std::size_t i, const char* what) {
    return "sample_" + std::to_string(i) + "_" + what + ".cxv";
}

}  // namespace

void SuperellipsoidParams::validate(const Grid3& grid) const {
    if (!(a > 0) || !(b > 0) || !(c > 0) || !(n > 0) || !(e > 0)) {
        throw Error(Errc::InvalidArgument, "superellipsoid parameters must be positive");
    }
    if (a > grid.nx / 4.0 || b > grid.ny / 4.0 || c > grid.nz / 4.0) {
        throw Error(Errc::ParamsExceedGrid, "semi-axes must not exceed a quarter of the grid " + to_string(grid));
    }
}

Quaternion Quaternion::axis_angle(double ax, double ay, double az, double angle) {
    const double len = std::sqrt(ax * ax + ay * ay + az * az);
    const double s = std::sin(angle / 2) / len;
    return {std::cos(angle / 2), ax * s, ay * s, az * s};
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

RealVolume superellipsoid_support(const SuperellipsoidParams& p, const Grid3& grid) {
    p.validate(grid);
    RealVolume out(grid);
    const double exy = 2.0 / p.e, ez = 2.0 / p.n, outer = p.e / p.n;
    for (int z = 0; z < grid.nz; ++z) {
        const double tz = std::pow(std::abs((z - grid.nz / 2) / p.c), ez);
        for (int y = 0; y < grid.ny; ++y) {
            const double ty = std::pow(std::abs((y - grid.ny / 2) / p.b), exy);
            for (int x = 0; x < grid.nx; ++x) {
                const double tx = std::pow(std::abs((x - grid.nx / 2) / p.a), exy);
                out.at(x, y, z) = std::pow(tx + ty, outer) + tz <= 1.0 ? 1.0 : 0.0;
            }
        }
    }
    return out;
}

RealVolume gaussian_phase_field(const PhaseFieldParams& p, const RealVolume& support) {
    if (!(p.lx > 0) || !(p.ly > 0) || !(p.lz > 0)) {
        throw Error(Errc::InvalidArgument, "correlation lengths must be positive");
    }
    const Grid3& g = support.grid();
    const auto interior = std::count_if(support.values().begin(), support.values().end(), [](double s) { return s > 0.5; });
    if (interior < 2) throw Error(Errc::DegenerateSupport, "support needs at least two voxels");

    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ComplexVolume noise(g);
    for (auto& v : noise.values()) v = gauss(rng);

    // Kernel centered on the center voxel; circular convolution through the centered transform.
    const double prefactor = std::sqrt(p.lx * p.ly * p.lz) / std::pow(std::numbers::pi, 0.75);
    ComplexVolume kernel(g);
    for (int z = 0; z < g.nz; ++z) {
        const double dz = z - g.nz / 2;
        for (int y = 0; y < g.ny; ++y) {
            const double dy = y - g.ny / 2;
            for (int x = 0; x < g.nx; ++x) {
                const double dx = x - g.nx / 2;
                kernel.at(x, y, z) = prefactor * std::exp(-dx * dx / (2 * p.lx * p.lx) - dy * dy / (2 * p.ly * p.ly) -
                                                          dz * dz / (2 * p.lz * p.lz));
            }
        }
    }
    ComplexVolume spectrum = fft_forward(noise);
    const ComplexVolume kspec = fft_forward(kernel);
    for (std::size_t i = 0; i < spectrum.size(); ++i) spectrum[i] *= kspec[i];
    const ComplexVolume field = fft_inverse(spectrum);

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (support[i] > 0.5) {
            lo = std::min(lo, field[i].real());
            hi = std::max(hi, field[i].real());
        }
    }
    if (!(hi > lo)) throw Error(Errc::DegenerateSupport, "phase field is constant over the support");

    RealVolume out(g);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = support[i] > 0.5 ? (field[i].real() - lo) / (hi - lo) : 0.0;
    }
    return out;
}

ComplexVolume random_rotation(const ComplexVolume& v, const Quaternion& q) {
    if (std::abs(q.norm() - 1.0) > 1e-9) throw Error(Errc::NonUnitQuaternion, "rotation quaternion is not unit");
    const Grid3& g = v.grid();
    const Mat3 r = rotation_matrix(q);
    const double cx = g.nx / 2, cy = g.ny / 2, cz = g.nz / 2;

    auto sample = [&](int x, int y, int z) -> cdouble {
        if (x < 0 || y < 0 || z < 0 || x >= g.nx || y >= g.ny || z >= g.nz) return {};
        return v.at(x, y, z);
    };

    ComplexVolume out(g);
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x) {
                const double ox = x - cx, oy = y - cy, oz = z - cz;
                // Inverse map: source = R^T (out - c) + c.
                const double sx = snap(r[0][0] * ox + r[1][0] * oy + r[2][0] * oz + cx);
                const double sy = snap(r[0][1] * ox + r[1][1] * oy + r[2][1] * oz + cy);
                const double sz = snap(r[0][2] * ox + r[1][2] * oy + r[2][2] * oz + cz);
                const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy)),
                          z0 = static_cast<int>(std::floor(sz));
                const double fx = sx - x0, fy = sy - y0, fz = sz - z0;
                if (fx == 0.0 && fy == 0.0 && fz == 0.0) {
                    out.at(x, y, z) = sample(x0, y0, z0);
                    continue;
                }
                cdouble acc{};
                for (int k = 0; k < 8; ++k) {
                    const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
                    const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                    if (w != 0.0) acc += w * sample(x0 + dx, y0 + dy, z0 + dz);
                }
                out.at(x, y, z) = acc;
            }
    return out;
}

bool within_central_half_box(const ComplexVolume& v) {
    const Grid3& g = v.grid();
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x) {
                const bool inside = x >= g.nx / 4 && x < 3 * g.nx / 4 && y >= g.ny / 4 && y < 3 * g.ny / 4 &&
                                    z >= g.nz / 4 && z < 3 * g.nz / 4;
                if (!inside && v.at(x, y, z) != cdouble{}) return false;
            }
    return true;
}

DiffractionPattern synthesize_diffraction(const ComplexVolume& particle, std::string source_tag) {
    if (!within_central_half_box(particle)) {
        throw Error(Errc::OversamplingViolation, "particle extends beyond the central half-box");
    }
    return {modulus(fft_forward(particle)), std::move(source_tag)};
}

ParamRanges ParamRanges::defaults(const Grid3& grid) {
    const double n = std::min({grid.nx, grid.ny, grid.nz});
    return {{n / 10.0, n / 4.5}, {0.4, 2.0}, {2.0, 8.0}, 1.0};
}

void ParamRanges::validate(const Grid3& grid) const {
    const double n = std::min({grid.nx, grid.ny, grid.nz});
    auto ok = [](const Range& r) { return r.lo > 0 && r.hi >= r.lo; };
    if (!ok(axes) || !ok(exponents) || !ok(correlation)) {
        throw Error(Errc::InvalidArgument, "parameter ranges must be positive with lo <= hi");
    }
    if (axes.hi > n / 4.0) throw Error(Errc::ParamsExceedGrid, "semi-axis range exceeds a quarter of the grid");
    if (!(phase_scale > 0)) throw Error(Errc::InvalidArgument, "phase scale must be positive");
}

RealVolume SampleRecord::target_amplitude() const { return modulus(crop_center(particle, particle.grid().half())); }

RealVolume SampleRecord::target_phase() const {
    RealVolume phi = cxdi::phase(crop_center(particle, particle.grid().half()));
    for (auto& v : phi.values()) v /= phase_scale;
    return phi;
}

std::size_t validation_count(std::size_t count) { return count / 20; }

SampleRecord generate_sample(const Grid3& grid, const ParamRanges& ranges, std::uint64_t seed, std::size_t index,
                             std::size_t count) {
    ranges.validate(grid);
    auto rng = record_stream(seed, index);
    SampleRecord rec;
    rec.index = index;
    rec.seed = seed;
    rec.phase_scale = ranges.phase_scale;
    rec.split = index >= count - validation_count(count) ? Split::validation : Split::train;

    for (int attempt = 1; attempt <= kMaxShapeAttempts; ++attempt) {
        rec.shape = {draw(rng, ranges.axes), draw(rng, ranges.axes), draw(rng, ranges.axes),
                     draw(rng, ranges.exponents), draw(rng, ranges.exponents)};
        rec.phase = {draw(rng, ranges.correlation), draw(rng, ranges.correlation), draw(rng, ranges.correlation), rng()};
        rec.rotation = sample_rotation(rng);
        rec.attempts = attempt;

        const RealVolume support = superellipsoid_support(rec.shape, grid);
        if (std::count(support.values().begin(), support.values().end(), 1.0) < 2) continue;
        const RealVolume phi = gaussian_phase_field(rec.phase, support);
        ComplexVolume rotated = random_rotation(polar(support, phi, ranges.phase_scale), rec.rotation);
        if (!within_central_half_box(rotated)) continue;
        rec.particle = std::move(rotated);
        rec.pattern = synthesize_diffraction(rec.particle, "synthetic:seed=" + std::to_string(seed) +
                                                               ":index=" + std::to_string(index));
        return rec;
    }
    throw Error(Errc::ParamsExceedGrid, "no rotated particle fit the central half-box after " +
                                            std::to_string(kMaxShapeAttempts) + " draws");
}

void generate_dataset(std::size_t count, const Grid3& grid, const ParamRanges& ranges, std::uint64_t seed,
                      const std::function<void(SampleRecord&&)>& sink) {
    for (std::size_t i = 0; i < count; ++i) sink(generate_sample(grid, ranges, seed, i, count));
}

std::vector<SampleRecord> generate_dataset(std::size_t count, const Grid3& grid, const ParamRanges& ranges,
                                           std::uint64_t seed) {
    std::vector<SampleRecord> out;
    out.reserve(count);
    generate_dataset(count, grid, ranges, seed, [&](SampleRecord&& r) { out.push_back(std::move(r)); });
    return out;
}

void write_dataset(const std::filesystem::path& dir, std::size_t count, const Grid3& grid, const ParamRanges& ranges,
                   std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["count"] = count;
    manifest["grid"] = {grid.nx, grid.ny, grid.nz};
    manifest["seed"] = seed;
    manifest["ranges"] = {{"axes", {ranges.axes.lo, ranges.axes.hi}},
                          {"exponents", {ranges.exponents.lo, ranges.exponents.hi}},
                          {"correlation", {ranges.correlation.lo, ranges.correlation.hi}},
                          {"phase_scale", ranges.phase_scale}};
    manifest["samples"] = nlohmann::ordered_json::array();
    generate_dataset(count, grid, ranges, seed, [&](SampleRecord&& r) {
        const auto particle = sample_name(r.index, "particle");
        const auto pattern = sample_name(r.index, "pattern");
        write_volume(r.particle, dir / particle, r.pattern.source_tag);
        write_volume(r.pattern, dir / pattern);
        nlohmann::ordered_json s;
        s["index"] = r.index;
        s["split"] = r.split == Split::train ? "train" : "validation";
        s["attempts"] = r.attempts;
        s["shape"] = {{"a", r.shape.a}, {"b", r.shape.b}, {"c", r.shape.c}, {"n", r.shape.n}, {"e", r.shape.e}};
        s["phase"] = {{"lx", r.phase.lx}, {"ly", r.phase.ly}, {"lz", r.phase.lz}, {"seed", r.phase.seed}};
        s["rotation"] = {r.rotation.w, r.rotation.x, r.rotation.y, r.rotation.z};
        s["particle"] = particle;
        s["pattern"] = pattern;
        manifest["samples"].push_back(std::move(s));
    });
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<SampleRecord> read_dataset(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::HeaderParse, std::string("manifest.json: ") + e.what());
    }
    std::vector<SampleRecord> out;
    try {
        const auto seed = manifest.at("seed").get<std::uint64_t>();
        const double phase_scale = manifest.at("ranges").value("phase_scale", 1.0);
        for (const auto& s : manifest.at("samples")) {
            SampleRecord r;
            r.index = s.at("index").get<std::size_t>();
            r.seed = seed;
            r.phase_scale = phase_scale;
            r.split = s.at("split").get<std::string>() == "validation" ? Split::validation : Split::train;
            r.attempts = s.at("attempts").get<int>();
            const auto& sh = s.at("shape");
            r.shape = {sh.at("a"), sh.at("b"), sh.at("c"), sh.at("n"), sh.at("e")};
            const auto& ph = s.at("phase");
            r.phase = {ph.at("lx"), ph.at("ly"), ph.at("lz"), ph.at("seed").get<std::uint64_t>()};
            const auto& q = s.at("rotation");
            r.rotation = {q.at(0), q.at(1), q.at(2), q.at(3)};
            r.particle = read_complex(dir / s.at("particle").get<std::string>());
            r.pattern = read_pattern(dir / s.at("pattern").get<std::string>());
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::HeaderParse, std::string("manifest.json: ") + e.what());
    }
    if (out.empty()) throw Error(Errc::EmptyDataset, "dataset " + dir.string() + " has no samples");
    return out;
}

}  // namespace cxdi
