#include "doctest.h"

#include <filesystem>
#include <functional>
#include <random>

#include "cxdi/volume_io.hpp"

using namespace cxdi;
namespace fs = std::filesystem;

namespace {

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return Errc::InvalidArgument;
}

ComplexVolume sample(const Grid3& g) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    ComplexVolume v(g);
    for (auto& z : v.values()) z = {n(rng), n(rng)};
    return v;
}

}  // namespace

TEST_CASE(".cxv round trip is byte exact") {
    const Grid3 g{4, 6, 8};
    const auto f = make_volume_file(sample(g), DType::c64, "unit");
    const std::string bytes = encode_volume(f);
    const auto back = decode_volume(bytes);
    CHECK(back.kind == VolumeKind::complex_density);
    CHECK(back.source_tag == "unit");
    CHECK(back.complex() == f.complex());
    CHECK(encode_volume(back) == bytes);

    RealVolume amp(g, 0.25);
    const auto p = make_volume_file(DiffractionPattern(amp, "pat"), DType::f32);
    const auto pb = decode_volume(encode_volume(p));
    CHECK(pb.pattern().amplitude == amp);
    CHECK(encode_volume(pb) == encode_volume(p));
}

TEST_CASE("files go through an atomic write") {
    const fs::path dir = fs::temp_directory_path() / "cxdi_io_test";
    fs::create_directories(dir);
    const Grid3 g = Grid3::cube(4);
    write_volume(sample(g), dir / "v.cxv", "t");
    CHECK(read_complex(dir / "v.cxv") == sample(g));
    CHECK_THROWS_AS(read_pattern(dir / "v.cxv"), Error);
    fs::remove_all(dir);
    CHECK(code_of([&] { read_volume(dir / "missing.cxv"); }) == Errc::IoFailure);
}

TEST_CASE("corrupt files raise specific errors") {
    const Grid3 g = Grid3::cube(4);
    const std::string good = encode_volume(make_volume_file(sample(g)));

    std::string bad = good;
    bad[0] = 'X';
    CHECK(code_of([&] { decode_volume(bad); }) == Errc::BadMagic);

    CHECK(code_of([&] { decode_volume(good.substr(0, good.size() - 3)); }) == Errc::TruncatedPayload);
    CHECK(code_of([&] { decode_volume(good + "abcdefgh"); }) == Errc::DimensionMismatch);
    CHECK(code_of([&] { decode_volume(good.substr(0, 10)); }) == Errc::HeaderParse);

    std::string header_broken = good;
    header_broken[8] = '[';
    CHECK(code_of([&] { decode_volume(header_broken); }) == Errc::HeaderParse);
    CHECK(is_io_error(Errc::TruncatedPayload));
    CHECK_FALSE(is_io_error(Errc::NonFiniteLoss));
}
