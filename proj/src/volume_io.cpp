#include "cxdi/volume_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace cxdi {

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic{'C', 'X', 'V', '1'};

template <class Float>
void append_scalar(std::string& out, double v) {
    const Float f = static_cast<Float>(v);
    char buf[sizeof(Float)];
    std::memcpy(buf, &f, sizeof(Float));
    out.append(buf, sizeof(Float));
}

template <class Float>
double load_scalar(const char* p) {
    Float f;
    std::memcpy(&f, p, sizeof(Float));
    return static_cast<double>(f);
}

void append_value(std::string& out, DType d, double v) {
    if (d == DType::c64 || d == DType::f64) {
        append_scalar<double>(out, v);
    } else {
        append_scalar<float>(out, v);
    }
}

double load_value(const char* p, DType d) {
    return (d == DType::c64 || d == DType::f64) ? load_scalar<double>(p) : load_scalar<float>(p);
}

}  // namespace

std::string_view to_string(DType d) noexcept {
    switch (d) {
        case DType::c64: return "c64";
        case DType::c32: return "c32";
        case DType::f64: return "f64";
        case DType::f32: return "f32";
    }
    return "?";
}

std::string_view to_string(VolumeKind k) noexcept {
    switch (k) {
        case VolumeKind::complex_density: return "complex_density";
        case VolumeKind::diffraction_amplitude: return "diffraction_amplitude";
        case VolumeKind::real: return "real";
    }
    return "?";
}

DType parse_dtype(std::string_view s) {
    if (s == "c64") return DType::c64;
    if (s == "c32") return DType::c32;
    if (s == "f64") return DType::f64;
    if (s == "f32") return DType::f32;
    throw Error(Errc::HeaderParse, "unknown dtype '" + std::string(s) + "'");
}

VolumeKind parse_kind(std::string_view s) {
    if (s == "complex_density") return VolumeKind::complex_density;
    if (s == "diffraction_amplitude") return VolumeKind::diffraction_amplitude;
    if (s == "real") return VolumeKind::real;
    throw Error(Errc::HeaderParse, "unknown kind '" + std::string(s) + "'");
}

bool is_complex(DType d) noexcept { return d == DType::c64 || d == DType::c32; }

std::size_t scalar_bytes(DType d) noexcept { return (d == DType::c64 || d == DType::f64) ? 8 : 4; }

const Grid3& VolumeFile::grid() const {
    return std::visit([](const auto& v) -> const Grid3& { return v.grid(); }, data);
}

const ComplexVolume& VolumeFile::complex() const {
    if (const auto* v = std::get_if<ComplexVolume>(&data)) return *v;
    throw Error(Errc::DimensionMismatch, "file holds " + std::string(to_string(kind)) + ", expected complex_density");
}

const DiffractionPattern& VolumeFile::pattern() const {
    if (const auto* v = std::get_if<DiffractionPattern>(&data)) return *v;
    throw Error(Errc::DimensionMismatch,
                "file holds " + std::string(to_string(kind)) + ", expected diffraction_amplitude");
}

const RealVolume& VolumeFile::real() const {
    if (const auto* v = std::get_if<RealVolume>(&data)) return *v;
    throw Error(Errc::DimensionMismatch, "file holds " + std::string(to_string(kind)) + ", expected real");
}

VolumeFile make_volume_file(ComplexVolume v, DType dtype, std::string source_tag) {
    if (!is_complex(dtype)) throw Error(Errc::DimensionMismatch, "complex volume needs a complex dtype");
    return {VolumeKind::complex_density, dtype, true, std::move(source_tag), std::move(v)};
}

VolumeFile make_volume_file(DiffractionPattern p, DType dtype) {
    if (is_complex(dtype)) throw Error(Errc::DimensionMismatch, "diffraction amplitude needs a real dtype");
    std::string tag = p.source_tag;
    return {VolumeKind::diffraction_amplitude, dtype, true, std::move(tag), std::move(p)};
}

VolumeFile make_volume_file(RealVolume v, DType dtype, std::string source_tag) {
    if (is_complex(dtype)) throw Error(Errc::DimensionMismatch, "real volume needs a real dtype");
    return {VolumeKind::real, dtype, true, std::move(source_tag), std::move(v)};
}

std::string encode_volume(const VolumeFile& f) {
    const Grid3& g = f.grid();
    nlohmann::ordered_json header;
    header["dims"] = {g.nx, g.ny, g.nz};
    header["dtype"] = to_string(f.dtype);
    header["kind"] = to_string(f.kind);
    header["centered"] = f.centered;
    header["source_tag"] = f.source_tag;
    const std::string text = header.dump();

    std::string out;
    const std::size_t comps = is_complex(f.dtype) ? 2 : 1;
    out.reserve(8 + text.size() + g.size() * comps * scalar_bytes(f.dtype));
    out.append(kMagic.data(), kMagic.size());
    const auto len = static_cast<std::uint32_t>(text.size());
    char lenbuf[4];
    std::memcpy(lenbuf, &len, 4);
    out.append(lenbuf, 4);
    out.append(text);

    std::visit(
        [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, ComplexVolume>) {
                for (const auto& c : v.values()) {
                    append_value(out, f.dtype, c.real());
                    append_value(out, f.dtype, c.imag());
                }
            } else if constexpr (std::is_same_v<V, DiffractionPattern>) {
                for (double d : v.amplitude.values()) append_value(out, f.dtype, d);
            } else {
                for (double d : v.values()) append_value(out, f.dtype, d);
            }
        },
        f.data);
    return out;
}

VolumeFile decode_volume(std::string_view bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
        throw Error(Errc::BadMagic, "missing CXV1 magic");
    }
    std::uint32_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 4, 4);
    if (bytes.size() < 8 + static_cast<std::size_t>(hlen)) throw Error(Errc::HeaderParse, "header runs past end of file");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::HeaderParse, e.what());
    }

    VolumeFile f;
    std::array<int, 3> dims{};
    try {
        if (!header.is_object()) throw Error(Errc::HeaderParse, "header is not a JSON object");
        const auto& d = header.at("dims");
        if (!d.is_array() || d.size() != 3) throw Error(Errc::HeaderParse, "dims must be a 3-element array");
        for (int i = 0; i < 3; ++i) dims[i] = d.at(i).get<int>();
        f.dtype = parse_dtype(header.at("dtype").get<std::string>());
        f.kind = parse_kind(header.at("kind").get<std::string>());
        f.centered = header.at("centered").get<bool>();
        f.source_tag = header.at("source_tag").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::HeaderParse, e.what());
    }

    Grid3 grid;
    try {
        grid = Grid3(dims[0], dims[1], dims[2]);
    } catch (const Error& e) {
        throw Error(Errc::DimensionMismatch, e.what());
    }
    const bool cplx = f.kind == VolumeKind::complex_density;
    if (cplx != is_complex(f.dtype)) {
        throw Error(Errc::DimensionMismatch,
                    "dtype " + std::string(to_string(f.dtype)) + " incompatible with kind " +
                        std::string(to_string(f.kind)));
    }
    if (f.kind == VolumeKind::diffraction_amplitude && !f.centered) {
        throw Error(Errc::HeaderParse, "diffraction amplitudes must be stored centered");
    }

    const std::size_t width = scalar_bytes(f.dtype);
    const std::size_t count = grid.size() * (cplx ? 2 : 1);
    const std::string_view payload = bytes.substr(8 + hlen);
    if (payload.size() < count * width) {
        throw Error(Errc::TruncatedPayload, "expected " + std::to_string(count * width) + " payload bytes, found " +
                                                std::to_string(payload.size()));
    }
    if (payload.size() > count * width) {
        throw Error(Errc::DimensionMismatch, "payload longer than dims " + to_string(grid) + " imply");
    }

    const char* p = payload.data();
    if (cplx) {
        ComplexVolume v(grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            v[i] = {load_value(p + 2 * i * width, f.dtype), load_value(p + (2 * i + 1) * width, f.dtype)};
        }
        f.data = std::move(v);
    } else {
        RealVolume v(grid);
        for (std::size_t i = 0; i < grid.size(); ++i) v[i] = load_value(p + i * width, f.dtype);
        if (f.kind == VolumeKind::diffraction_amplitude) {
            try {
                f.data = DiffractionPattern(std::move(v), f.source_tag);
            } catch (const Error& e) {
                throw Error(Errc::HeaderParse, e.what());
            }
        } else {
            f.data = std::move(v);
        }
    }
    return f;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::IoFailure, "cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(Errc::IoFailure, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(Errc::IoFailure, "rename to " + path.string() + " failed: " + ec.message());
}

VolumeFile read_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }

void write_volume(const VolumeFile& f, const std::filesystem::path& path) {
    write_file_atomic(path, encode_volume(f));
}

DiffractionPattern read_pattern(const std::filesystem::path& path) { return read_volume(path).pattern(); }

ComplexVolume read_complex(const std::filesystem::path& path) { return read_volume(path).complex(); }

void write_volume(const ComplexVolume& v, const std::filesystem::path& path, std::string source_tag) {
    write_volume(make_volume_file(v, DType::c64, std::move(source_tag)), path);
}

void write_volume(const DiffractionPattern& p, const std::filesystem::path& path) {
    write_volume(make_volume_file(p, DType::f64), path);
}

}  // namespace cxdi
