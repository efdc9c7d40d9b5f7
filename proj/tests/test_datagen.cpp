#include "doctest.h"

#include <cmath>
#include <numbers>

#include "cxdi/datagen.hpp"

using namespace cxdi;

TEST_CASE("sphere superellipsoid voxel count") {
    const Grid3 g = Grid3::cube(64);
    const auto s = superellipsoid_support({12, 12, 12, 1, 1}, g);
    double count = 0.0;
    for (double v : s.values()) count += v;
    const double expected = 4.0 / 3.0 * std::numbers::pi * 12 * 12 * 12;
    CHECK(std::abs(count - expected) <= 0.02 * expected);
    CHECK(s.at(32, 32, 32) == 1.0);
    CHECK(s.at(32 + 13, 32, 32) == 0.0);
}

TEST_CASE("superellipsoid parameter validation") {
    CHECK_THROWS_AS(superellipsoid_support({0, 1, 1, 1, 1}, Grid3::cube(16)), Error);
    CHECK_THROWS_AS(superellipsoid_support({5, 1, 1, 1, 1}, Grid3::cube(16)), Error);
}

TEST_CASE("rotating a centered sphere leaves it in place") {
    // Boundary disagreement falls off roughly as 0.4 / R voxels; 2% needs R >= 24.
    const Grid3 g = Grid3::cube(96);
    const auto s = superellipsoid_support({24, 24, 24, 1, 1}, g);
    ComplexVolume v(g);
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        v[i] = s[i];
        total += s[i];
    }
    const auto r = random_rotation(v, Quaternion::axis_angle(1, 2, 3, 0.8));
    double disagree = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) disagree += (std::abs(r[i]) >= 0.5) != (s[i] > 0.5);
    CHECK(disagree <= 0.02 * total);
    CHECK_THROWS_AS(random_rotation(v, Quaternion{1, 1, 0, 0}), Error);
}

TEST_CASE("phase field spans [0, 1] on the support and has no preferred axis") {
    const Grid3 g = Grid3::cube(16);
    const auto s = superellipsoid_support({4, 4, 4, 1, 1}, g);
    double lo = 1, hi = 0;
    const auto f = gaussian_phase_field({2, 2, 2, 11}, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] > 0) {
            lo = std::min(lo, f[i]);
            hi = std::max(hi, f[i]);
        } else {
            CHECK(f[i] == 0.0);
        }
    }
    CHECK(lo == doctest::Approx(0.0));
    CHECK(hi == doctest::Approx(1.0));

    // Averaged over seeds, neighbour differences along x, y and z have the same spread.
    const auto big = superellipsoid_support({8, 8, 8, 1, 1}, Grid3::cube(32));
    double d[3] = {0, 0, 0};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto p = gaussian_phase_field({2, 2, 2, seed}, big);
        for (int z = 8; z < 24; ++z)
            for (int y = 8; y < 24; ++y)
                for (int x = 8; x < 24; ++x) {
                    if (big.at(x, y, z) == 0 || big.at(x + 1, y, z) == 0 || big.at(x, y + 1, z) == 0 ||
                        big.at(x, y, z + 1) == 0)
                        continue;
                    d[0] += std::pow(p.at(x + 1, y, z) - p.at(x, y, z), 2);
                    d[1] += std::pow(p.at(x, y + 1, z) - p.at(x, y, z), 2);
                    d[2] += std::pow(p.at(x, y, z + 1) - p.at(x, y, z), 2);
                }
    }
    const double mean = (d[0] + d[1] + d[2]) / 3;
    for (double v : d) CHECK(std::abs(v - mean) <= 0.1 * mean);
}

TEST_CASE("generated samples respect oversampling and are deterministic") {
    const Grid3 g = Grid3::cube(16);
    const auto ranges = ParamRanges::defaults(g);
    const auto a = generate_sample(g, ranges, 42, 3, 10);
    const auto b = generate_sample(g, ranges, 42, 3, 10);
    CHECK(a.particle == b.particle);
    CHECK(a.pattern.amplitude == b.pattern.amplitude);
    CHECK(within_central_half_box(a.particle));
    CHECK(a.target_amplitude().grid() == g.half());

    const auto direct = synthesize_diffraction(a.particle);
    CHECK(direct.amplitude == a.pattern.amplitude);

    const auto c = generate_sample(g, ranges, 42, 4, 10);
    CHECK_FALSE(c.particle == a.particle);
}

TEST_CASE("dataset splits and validation") {
    CHECK(validation_count(19) == 0);
    CHECK(validation_count(20) == 1);
    CHECK(validation_count(100) == 5);
    const auto ds = generate_dataset(20, Grid3::cube(16), ParamRanges::defaults(Grid3::cube(16)), 1);
    REQUIRE(ds.size() == 20);
    CHECK(ds.back().split == Split::validation);
    CHECK(ds.front().split == Split::train);

    ComplexVolume outside(Grid3::cube(8));
    outside.at(0, 0, 0) = 1.0;
    CHECK_THROWS_AS(synthesize_diffraction(outside), Error);
    auto r = ParamRanges::defaults(Grid3::cube(16));
    r.axes.hi = 5;
    CHECK_THROWS_AS(r.validate(Grid3::cube(16)), Error);
}
