#include "doctest.h"

#include <random>

#include "cxdi/metrics.hpp"

using namespace cxdi;

namespace {

RealVolume random_real(const Grid3& g, std::uint64_t seed, double mean = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(mean, 1.0);
    RealVolume v(g);
    for (auto& x : v.values()) x = n(rng);
    return v;
}

RealVolume affine(const RealVolume& v, double a, double b) {
    RealVolume out = v;
    for (auto& x : out.values()) x = a * x + b;
    return out;
}

}  // namespace

TEST_CASE("relative norms") {
    const Grid3 g = Grid3::cube(4);
    const auto ref = random_real(g, 1, 2.0);
    const auto d = random_real(g, 2);
    RealVolume p1 = ref, p3 = ref;
    for (std::size_t i = 0; i < g.size(); ++i) {
        p1[i] += d[i];
        p3[i] -= 3.0 * d[i];
    }
    CHECK(rel_l2(p3, ref) == doctest::Approx(3.0 * rel_l2(p1, ref)).epsilon(1e-12));
    CHECK(rel_l2(ref, ref) == 0.0);
    CHECK_THROWS_AS(rel_l2(ref, RealVolume(g)), Error);
    CHECK_THROWS_AS(rel_l2(ref, RealVolume(Grid3::cube(6))), Error);
}

TEST_CASE("modified Pearson loss is affine and sign invariant") {
    const Grid3 g = Grid3::cube(4);
    const auto a = random_real(g, 3);
    const auto b = random_real(g, 4);
    const double base = pearson_loss(a, b);
    CHECK(std::abs(pearson_loss(affine(a, 2.5, -1.0), b) - base) < 1e-12);
    CHECK(std::abs(pearson_loss(affine(a, -0.3, 4.0), b) - base) < 1e-12);
    CHECK(pearson_loss(a, a) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(pearson_loss(RealVolume(g, 1.0), b), Error);
}

TEST_CASE("chi-square loss") {
    const Grid3 g = Grid3::cube(4);
    const auto m = random_real(g, 5, 3.0);
    CHECK(chi2_loss(m, m) == 0.0);
    RealVolume p = affine(m, 1.0, 0.0);
    p[0] += 1.0;
    double norm = 0.0;
    for (double v : m.values()) norm += v * v;
    CHECK(chi2_loss(p, m) == doctest::Approx(1.0 / norm));

    // Permuting voxels of both arguments changes nothing.
    RealVolume pr(g), mr(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        pr[i] = p[g.size() - 1 - i];
        mr[i] = m[g.size() - 1 - i];
    }
    CHECK(chi2_loss(pr, mr) == doctest::Approx(chi2_loss(p, m)).epsilon(1e-14));
}

TEST_CASE("Weibull schedule endpoints and monotonicity") {
    const WeibullSchedule s;
    CHECK(weibull_beta1(0, s) == doctest::Approx(1.0e4).epsilon(1e-15));
    CHECK(weibull_beta1(1000, s) == doctest::Approx(1.0).epsilon(1e-12));
    double prev = weibull_beta1(0, s);
    for (long n = 1; n < 50; ++n) {
        const double b = weibull_beta1(n, s);
        CHECK(b <= prev);
        CHECK(b >= 1.0);
        prev = b;
    }
    WeibullSchedule slow = s;
    slow.epoch_divisor = 100;
    CHECK(weibull_beta1(10, slow) > weibull_beta1(10, s));
    WeibullSchedule bad = s;
    bad.lambda = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("unsupervised loss endpoints") {
    const Grid3 g = Grid3::cube(4);
    const auto m = random_real(g, 6, 3.0);
    const auto p = random_real(g, 7, 3.0);
    CHECK(unsupervised_loss(m, m, 5.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(unsupervised_loss(p, m, 0.0, 1.0) == doctest::Approx(chi2_loss(p, m)));
    CHECK(unsupervised_loss(p, m, 1e12, 1.0) == doctest::Approx(pearson_loss(p, m)).epsilon(1e-9));
}

TEST_CASE("supervised loss is zero at the target") {
    const Grid3 pattern = Grid3::cube(8);
    const auto amp = affine(random_real(pattern.half(), 8), 0.1, 1.0);
    const auto phi = affine(random_real(pattern.half(), 9), 0.1, 0.5);
    const auto t = supervised_loss(amp, phi, amp, phi, {}, pattern);
    CHECK(t.total == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(SupervisedWeights({-1.0, 1.0, 1.0}).validate(), Error);
}

TEST_CASE("FSW conserves total amplitude") {
    const Grid3 g{8, 10, 12};
    auto a = random_real(g, 10);
    for (auto& v : a.values()) v = std::abs(v);
    const auto f = fourier_spectral_weight(a, 4);
    double total = 0.0, sum = 0.0;
    for (double v : a.values()) total += v;
    for (double v : f.weights) sum += v;
    CHECK(std::abs(sum - total) <= 1e-12 * total);
    CHECK(f.shell_edges.size() == 5);

    RealVolume delta(g);
    delta.at(4, 5, 6) = 3.0;
    const auto fd = fourier_spectral_weight(delta, 4);
    CHECK(fd.weights[0] == 3.0);
    CHECK(fd.to_csv().rfind("shell_index,radius_lo,radius_hi,weight\n", 0) == 0);
}
