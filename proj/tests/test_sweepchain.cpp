#include "doctest.h"
#include "oracle.hpp"

#include "rtag/error.hpp"
#include "rtag/sweepchain.hpp"

#include <algorithm>
#include <numeric>

using namespace rtag;
using namespace rtag::sweepchain;
using tagphys::BridgeScale;
using tagphys::CouplingModel;
using tagphys::ObjectSpec;

namespace {

ObjectSpec single(const std::string& name, double f0, double q) {
    ObjectSpec o;
    o.name = name;
    o.tags = {{tagphys::TagSpec{name, tagphys::TagKind::LC, f0, q, 1e-3, 0.0}, Vec3::UnitZ()}};
    return o;
}

const CouplingModel& model() {
    static const CouplingModel m{tagphys::CoilSpec{}};
    return m;
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t nearest_bin(const std::vector<double>& axis, double f) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < axis.size(); ++k) {
        if (std::abs(std::log(axis[k] / f)) < std::abs(std::log(axis[best] / f))) best = k;
    }
    return best;
}

} // namespace

TEST_CASE("chirp covers one decade per frame") {
    const SweepConfig cfg;
    CHECK(chirp_freq(0.0, cfg) == 40000.0);
    CHECK(chirp_freq(cfg.frame_period, cfg) == 400000.0);
    CHECK(cfg.frame_period == 1.0 / 30.0);
    CHECK(chirp_freq(cfg.frame_period / 2, cfg) == doctest::Approx(40000.0 * std::sqrt(10.0)).epsilon(1e-14));
    CHECK_THROWS_AS(chirp_freq(-1e-9, cfg), DomainError);
    CHECK_THROWS_AS(chirp_freq(cfg.frame_period * 1.001, cfg), DomainError);

    const auto axis = bin_frequencies(cfg);
    REQUIRE(axis.size() == 2048);
    CHECK(axis.front() == 40000.0);
    CHECK(axis.back() == 400000.0);
    for (std::size_t k = 1; k < axis.size(); ++k) {
        CHECK(axis[k] > axis[k - 1]);
        // constant ratio between neighbours
        CHECK(axis[k] / axis[k - 1] == doctest::Approx(std::pow(10.0, 1.0 / 2047)).epsilon(1e-12));
    }
}

TEST_CASE("empty noise-free scene gives a zero spectrum") {
    const SweepConfig cfg;
    const auto s = bridge_response(std::span<const PlacedObject>{}, model(), BridgeScale{}, cfg, 0);
    CHECK(s.frame.magnitude.size() == 2048);
    CHECK(std::all_of(s.frame.magnitude.begin(), s.frame.magnitude.end(), [](double m) { return m == 0.0; }));
}

TEST_CASE("single tag peaks at its resonance") {
    const SweepConfig cfg;
    const auto tag = single("a", 100e3, 50);
    const PlacedObject obj{&tag, Pose{Vec3(0, 0, 0.05), Quat::Identity()}, 0.0};
    const auto s = bridge_response(std::span(&obj, 1), model(), BridgeScale{}, cfg, 0);
    const double arg = oracle::dense_argmax(
        [](double f) { return std::abs(oracle::reflected(100e3, 50, 1e-3, 1e-5, f)); }, 90e3, 110e3);
    const auto k = argmax(s.frame.magnitude);
    CHECK(std::abs(static_cast<long>(k) - static_cast<long>(nearest_bin(s.frame.freq_axis, arg))) <= 1);
    CHECK(std::abs(static_cast<long>(k) - static_cast<long>(nearest_bin(s.frame.freq_axis, 100e3))) <= 1);
}

TEST_CASE("two resolvable tags give two maxima") {
    const SweepConfig cfg;
    const auto a = single("a", 100e3, 50);
    const auto b = single("b", 110e3, 50);
    const PlacedObject objs[] = {{&a, Pose{Vec3(0, 0, 0.05), Quat::Identity()}, 0.0},
                                 {&b, Pose{Vec3(0.02, 0, 0.06), Quat::Identity()}, 0.0}};
    const auto s = bridge_response(objs, model(), BridgeScale{}, cfg, 0);
    const auto& m = s.frame.magnitude;
    std::vector<std::size_t> maxima;
    for (std::size_t k = 1; k + 1 < m.size(); ++k) {
        if (m[k] > m[k - 1] && m[k] >= m[k + 1]) maxima.push_back(k);
    }
    REQUIRE(maxima.size() == 2);
    CHECK(maxima[1] - maxima[0] >= 3);
}

TEST_CASE("synthesis is deterministic and sums complex responses") {
    SweepConfig cfg;
    cfg.noise_rms = 1e-3;
    cfg.seed = 99;
    const auto a = single("a", 80e3, 40);
    const auto b = single("b", 85e3, 60);
    const auto c = single("c", 200e3, 100);
    const PlacedObject objs[] = {{&a, Pose{Vec3(0.01, 0, 0.05), Quat::Identity()}, 0.0},
                                 {&b, Pose{Vec3(0.0, 0.03, 0.08), Quat(Eigen::AngleAxisd(0.4, Vec3::UnitX()))}, 0.0},
                                 {&c, Pose{Vec3(-0.05, 0, 0.1), Quat(Eigen::AngleAxisd(1.1, Vec3::UnitY()))}, 0.0}};
    const auto s1 = bridge_response(objs, model(), BridgeScale{}, cfg, 17);
    const auto s2 = bridge_response(objs, model(), BridgeScale{}, cfg, 17);
    CHECK(s1.frame.magnitude == s2.frame.magnitude);
    const auto s3 = bridge_response(objs, model(), BridgeScale{}, cfg, 18);
    CHECK(s1.frame.magnitude != s3.frame.magnitude);

    cfg.noise_rms = 0.0;
    const auto clean = bridge_response(objs, model(), BridgeScale{}, cfg, 0);
    double sum_of_magnitudes_excess = 0.0;
    for (std::size_t k = 0; k < clean.frame.size(); ++k) {
        const double f = clean.frame.freq_axis[k];
        std::complex<double> z = 0.0;
        double mags = 0.0;
        for (const auto& o : objs) {
            const Vec3 n = o.pose.orientation * Vec3::UnitZ();
            const Vec3 bfield = oracle::solenoid_field(0.2, 0.05, 30, 32, 1.0, o.pose.position);
            const double bref = oracle::solenoid_field(0.2, 0.05, 30, 32, 1.0, Vec3::Zero()).norm();
            const double cpl = n.dot(bfield) / bref;
            const auto& t = o.spec->tags[0].tag;
            const auto zr = oracle::reflected(t.f0, t.q, 1e-3, cpl * 1e-5, f);
            z += zr;
            mags += std::abs(zr);
        }
        CHECK(clean.frame.magnitude[k] == doctest::Approx(std::abs(z) / 10.0).epsilon(1e-6));
        sum_of_magnitudes_excess = std::max(sum_of_magnitudes_excess, mags / 10.0 - clean.frame.magnitude[k]);
    }
    // the two close tags interfere, so the complex sum differs from the magnitude sum
    CHECK(sum_of_magnitudes_excess > 1e-3);
}

TEST_CASE("peak magnitude falls monotonically as a tag moves away") {
    const SweepConfig cfg;
    const auto a = single("a", 150e3, 80);
    double prev = 1e300;
    for (int cm = 5; cm <= 25; ++cm) {
        const PlacedObject obj{&a, Pose{Vec3(0, 0, cm / 100.0), Quat::Identity()}, 0.0};
        const auto s = bridge_response(std::span(&obj, 1), model(), BridgeScale{}, cfg, 0);
        const double peak = *std::max_element(s.frame.magnitude.begin(), s.frame.magnitude.end());
        CHECK(peak < prev);
        prev = peak;
    }
}

TEST_CASE("tags outside the sweep are reported and invisible") {
    SweepConfig cfg;
    cfg.f_start = 50e3;
    cfg.f_end = 500e3;
    const auto a = single("low", 45e3, 50);
    const PlacedObject obj{&a, Pose{Vec3(0, 0, 0.05), Quat::Identity()}, 0.0};
    const auto s = bridge_response(std::span(&obj, 1), model(), BridgeScale{}, cfg, 0);
    CHECK(s.warnings.size() == 1);
    CHECK(*std::max_element(s.frame.magnitude.begin(), s.frame.magnitude.end()) == 0.0);
}

TEST_CASE("shape removes a constant offset") {
    SpectrumFrame f;
    f.freq_axis = bin_frequencies(SweepConfig{});
    f.magnitude.assign(2048, 0.37);
    const auto out = shape(f, 63);
    CHECK(std::all_of(out.magnitude.begin(), out.magnitude.end(), [](double m) { return m == 0.0; }));
    CHECK_THROWS_AS(shape(f, 64), DomainError);
    CHECK_THROWS_AS(shape(f, 1), DomainError);
}

TEST_CASE("shape keeps narrow peaks") {
    SpectrumFrame f;
    f.freq_axis = bin_frequencies(SweepConfig{});
    f.magnitude.resize(2048);
    SUBCASE("Lorentzian of width 8 bins, window 63") {
        for (std::size_t k = 0; k < 2048; ++k) {
            const double x = (static_cast<double>(k) - 1000.0) / 4.0;
            f.magnitude[k] = 0.5 / (1.0 + x * x) + 0.1;
        }
        const auto out = shape(f, 63);
        CHECK(out.magnitude[1000] > 0.95 * 0.5);
        CHECK(out.magnitude[1000] <= 0.5 + 1e-12);
    }
    SUBCASE("Gaussian peaks narrower than a quarter window") {
        for (int width : {3, 5, 8, 12, 15}) {
            for (std::size_t k = 0; k < 2048; ++k) {
                const double x = (static_cast<double>(k) - 700.0) / (width / 2.3548);
                f.magnitude[k] = std::exp(-0.5 * x * x) + 1e-4 * static_cast<double>(k);
            }
            const auto out = shape(f, 63);
            CHECK(out.magnitude[700] > 0.95);
        }
    }
}

TEST_CASE("shaping lowers the mean of a pure noise frame") {
    SweepConfig cfg;
    cfg.noise_rms = 1e-3;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        cfg.seed = seed;
        const auto s = bridge_response(std::span<const PlacedObject>{}, model(), BridgeScale{}, cfg, 0);
        const auto out = shape(s.frame, 63);
        const double in_mean = std::accumulate(s.frame.magnitude.begin(), s.frame.magnitude.end(), 0.0) / 2048;
        const double out_mean = std::accumulate(out.magnitude.begin(), out.magnitude.end(), 0.0) / 2048;
        CHECK(out_mean < in_mean);
        CHECK(*std::min_element(out.magnitude.begin(), out.magnitude.end()) >= 0.0);
    }
}

TEST_CASE("gaussian source is reproducible and standard") {
    GaussianSource a(5), b(5);
    double sum = 0, sq = 0;
    for (int i = 0; i < 200000; ++i) {
        const double x = a.next();
        CHECK(x == b.next());
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / 200000) < 0.01);
    CHECK(std::abs(sq / 200000 - 1.0) < 0.02);
}
