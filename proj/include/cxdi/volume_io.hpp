#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "cxdi/volume.hpp"

namespace cxdi {

// .cxv layout:
//   bytes 0-3   "CXV1"
//   bytes 4-7   little-endian u32 header length H
//   bytes 8..   H bytes of UTF-8 JSON {dims, dtype, kind, centered, source_tag}
//   then        little-endian payload, x fastest, complex as (re, im) pairs
// dtype "c64"/"c32" are complex with 64/32-bit components, "f64"/"f32" are real.

enum class DType { c64, c32, f64, f32 };
enum class VolumeKind { complex_density, diffraction_amplitude, real };

std::string_view to_string(DType d) noexcept;
std::string_view to_string(VolumeKind k) noexcept;
DType parse_dtype(std::string_view s);
VolumeKind parse_kind(std::string_view s);
bool is_complex(DType d) noexcept;
std::size_t scalar_bytes(DType d) noexcept;

struct VolumeFile {
    VolumeKind kind = VolumeKind::complex_density;
    DType dtype = DType::c64;
    bool centered = true;
    std::string source_tag;
    std::variant<ComplexVolume, DiffractionPattern, RealVolume> data;

    const Grid3& grid() const;
    const ComplexVolume& complex() const;
    const DiffractionPattern& pattern() const;
    const RealVolume& real() const;
};

VolumeFile make_volume_file(ComplexVolume v, DType dtype = DType::c64, std::string source_tag = {});
VolumeFile make_volume_file(DiffractionPattern p, DType dtype = DType::f64);
VolumeFile make_volume_file(RealVolume v, DType dtype = DType::f64, std::string source_tag = {});

std::string encode_volume(const VolumeFile& f);
VolumeFile decode_volume(std::string_view bytes);

VolumeFile read_volume(const std::filesystem::path& path);
void write_volume(const VolumeFile& f, const std::filesystem::path& path);

// Convenience wrappers that check the stored kind.
DiffractionPattern read_pattern(const std::filesystem::path& path);
ComplexVolume read_complex(const std::filesystem::path& path);
void write_volume(const ComplexVolume& v, const std::filesystem::path& path, std::string source_tag = {});
void write_volume(const DiffractionPattern& p, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace cxdi
