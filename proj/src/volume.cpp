#include "cxdi/volume.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace cxdi {

Grid3::Grid3(int x, int y, int z) : nx(x), ny(y), nz(z) {
    for (int n : {x, y, z}) {
        if (n < 4 || n % 2 != 0) {
            throw Error(Errc::InvalidGrid, "grid extents must be even and >= 4, got " + to_string(*this));
        }
    }
}

std::string to_string(const Grid3& g) {
    return "[" + std::to_string(g.nx) + "," + std::to_string(g.ny) + "," + std::to_string(g.nz) + "]";
}

DiffractionPattern::DiffractionPattern(RealVolume amp, std::string tag)
    : amplitude(std::move(amp)), source_tag(std::move(tag)) {
    for (double a : amplitude.values()) {
        if (!(a >= 0.0) || !std::isfinite(a)) {
            throw Error(Errc::InvalidArgument, "diffraction amplitudes must be finite and non-negative");
        }
    }
}

namespace {

// FFTW planning is not thread-safe; execution on distinct arrays is.
class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(const Grid3& g, int sign) {
        std::lock_guard lock(mutex_);
        auto key = std::make_tuple(g.nx, g.ny, g.nz, sign);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        std::vector<cdouble> scratch(g.size());
        auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
        fftw_plan plan = fftw_plan_dft_3d(g.nz, g.ny, g.nx, p, p, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, plan);
        return plan;
    }

    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

private:
    std::mutex mutex_;
    std::map<std::tuple<int, int, int, int>, fftw_plan> plans_;
};

// Roll by half the extent along every axis. Self-inverse for even extents.
void half_shift(std::span<const cdouble> in, std::span<cdouble> out, const Grid3& g) {
    const int hx = g.nx / 2, hy = g.ny / 2, hz = g.nz / 2;
    for (int z = 0; z < g.nz; ++z) {
        const int sz = (z + hz) % g.nz;
        for (int y = 0; y < g.ny; ++y) {
            const int sy = (y + hy) % g.ny;
            const cdouble* src = &in[g.index(0, y, z)];
            cdouble* dst = &out[g.index(0, sy, sz)];
            std::copy(src, src + hx, dst + hx);
            std::copy(src + hx, src + g.nx, dst);
        }
    }
}

ComplexVolume centered_transform(const ComplexVolume& v, int sign) {
    const Grid3& g = v.grid();
    std::vector<cdouble> work(g.size());
    half_shift(v.values(), work, g);
    auto* p = reinterpret_cast<fftw_complex*>(work.data());
    fftw_execute_dft(PlanCache::instance().get(g, sign), p, p);
    ComplexVolume out(g);
    half_shift(work, out.values(), g);
    return out;
}

template <class T>
Volume<T> pad_impl(const Volume<T>& v, const Grid3& target) {
    const Grid3& s = v.grid();
    if (target.nx < s.nx || target.ny < s.ny || target.nz < s.nz) {
        throw Error(Errc::TargetTooSmall, "cannot pad " + to_string(s) + " into " + to_string(target));
    }
    const int ox = (target.nx - s.nx) / 2, oy = (target.ny - s.ny) / 2, oz = (target.nz - s.nz) / 2;
    Volume<T> out(target);
    for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y) {
            const T* src = &v[s.index(0, y, z)];
            std::copy(src, src + s.nx, &out[target.index(ox, y + oy, z + oz)]);
        }
    return out;
}

template <class T>
Volume<T> crop_impl(const Volume<T>& v, const Grid3& target) {
    const Grid3& s = v.grid();
    if (target.nx > s.nx || target.ny > s.ny || target.nz > s.nz) {
        throw Error(Errc::TargetTooSmall, "cannot crop " + to_string(s) + " to " + to_string(target));
    }
    const int ox = (s.nx - target.nx) / 2, oy = (s.ny - target.ny) / 2, oz = (s.nz - target.nz) / 2;
    Volume<T> out(target);
    for (int z = 0; z < target.nz; ++z)
        for (int y = 0; y < target.ny; ++y) {
            const T* src = &v[s.index(ox, y + oy, z + oz)];
            std::copy(src, src + target.nx, &out[target.index(0, y, z)]);
        }
    return out;
}

int wrap(int i, int n) { return ((i % n) + n) % n; }

}  // namespace

ComplexVolume fft_forward(const ComplexVolume& v) { return centered_transform(v, FFTW_FORWARD); }

ComplexVolume fft_inverse(const ComplexVolume& v) {
    ComplexVolume out = centered_transform(v, FFTW_BACKWARD);
    const double scale = 1.0 / static_cast<double>(out.size());
    for (auto& c : out.values()) c *= scale;
    return out;
}

RealVolume modulus(const ComplexVolume& v) {
    RealVolume out(v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::abs(v[i]);
    return out;
}

RealVolume phase(const ComplexVolume& v) {
    RealVolume out(v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::arg(v[i]);
    return out;
}

ComplexVolume to_complex(const RealVolume& v) {
    ComplexVolume out(v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
    return out;
}

ComplexVolume polar(const RealVolume& amplitude, const RealVolume& phi, double phase_scale) {
    if (amplitude.grid() != phi.grid()) throw Error(Errc::ShapeMismatch, "amplitude/phase grids differ");
    ComplexVolume out(amplitude.grid());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::polar(amplitude[i], phase_scale * phi[i]);
    return out;
}

ComplexVolume zero_pad_center(const ComplexVolume& v, const Grid3& target) { return pad_impl(v, target); }
RealVolume zero_pad_center(const RealVolume& v, const Grid3& target) { return pad_impl(v, target); }
ComplexVolume crop_center(const ComplexVolume& v, const Grid3& target) { return crop_impl(v, target); }
RealVolume crop_center(const RealVolume& v, const Grid3& target) { return crop_impl(v, target); }

ComplexVolume circular_shift(const ComplexVolume& v, int sx, int sy, int sz) {
    const Grid3& g = v.grid();
    ComplexVolume out(g);
    for (int z = 0; z < g.nz; ++z) {
        const int tz = wrap(z + sz, g.nz);
        for (int y = 0; y < g.ny; ++y) {
            const int ty = wrap(y + sy, g.ny);
            for (int x = 0; x < g.nx; ++x) out.at(wrap(x + sx, g.nx), ty, tz) = v.at(x, y, z);
        }
    }
    return out;
}

ComplexVolume reflect_center(const ComplexVolume& v) {
    const Grid3& g = v.grid();
    ComplexVolume out(g);
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x)
                out.at(x, y, z) = v.at((g.nx - x) % g.nx, (g.ny - y) % g.ny, (g.nz - z) % g.nz);
    return out;
}

double energy(const ComplexVolume& v) {
    double s = 0.0;
    for (const auto& c : v.values()) s += std::norm(c);
    return s;
}

bool all_finite(const ComplexVolume& v) {
    return std::all_of(v.values().begin(), v.values().end(),
                       [](const cdouble& c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); });
}

bool all_finite(const RealVolume& v) {
    return std::all_of(v.values().begin(), v.values().end(), [](double d) { return std::isfinite(d); });
}

}  // namespace cxdi
