#include "doctest.h"
#include "oracle.hpp"

#include "rtag/error.hpp"
#include "rtag/ringdown.hpp"

#include <complex>

using namespace rtag;
using namespace rtag::ringdown;
using tagphys::TagKind;
using tagphys::TagSpec;

namespace {

// (2/T) |integral over the gate of A e^{-(t-t0)/tau} sin(w (t - t0) + phi) e^{-jwt} dt|
double analytic_gate(double a, double tau, double w, double phi, double t0, double g, double len) {
    using C = std::complex<double>;
    const C j(0, 1);
    auto integral = [](C rate, double lo, double hi) { return (std::exp(rate * hi) - std::exp(rate * lo)) / rate; };
    // sin(x) = (e^{jx} - e^{-jx}) / 2j, expanded against e^{-jwt}
    const C slow = std::exp(j * phi - j * w * t0 + t0 / tau) * integral(C(-1.0 / tau, 0.0), g, g + len);
    const C fast = std::exp(-j * phi + j * w * t0 + t0 / tau) * integral(C(-1.0 / tau, -2.0 * w), g, g + len);
    return 2.0 / len * std::abs(a * (slow - fast) / (2.0 * j));
}

RingdownCapture synthetic(double f, double a, double tau, double phi, double rate = 8.0) {
    RingdownCapture cap;
    cap.excite_freq = f;
    cap.sample_rate = rate * f;
    cap.t_off = 0.5e-3;
    const auto n = static_cast<std::size_t>(6e-3 * cap.sample_rate);
    cap.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = i / cap.sample_rate - cap.t_off;
        cap.samples[i] = t < 0 ? 0.0 : a * std::exp(-t / tau) * std::sin(2 * oracle::kPi * f * t + phi);
    }
    return cap;
}

TagSpec tag(double f0, double q, TagKind kind = TagKind::LC) {
    return TagSpec{"t", kind, f0, q, 1e-3, 0.0};
}

} // namespace

TEST_CASE("ladder tuning picks the nearest code") {
    LadderConfig ladder;
    ladder.l_reader = 1e-3;
    const double c_needed = 1.0 / (std::pow(2 * oracle::kPi * 100e3, 2) * 1e-3);
    CHECK(c_needed == doctest::Approx(2.533e-9).epsilon(1e-3));

    auto brute = [&](double target) {
        std::uint32_t best = 0;
        for (std::uint32_t code = 0; code <= ladder.max_code(); ++code) {
            const double f = 1.0 / (2 * oracle::kPi * std::sqrt(1e-3 * (ladder.c_min + code * ladder.c_lsb)));
            const double fb = 1.0 / (2 * oracle::kPi * std::sqrt(1e-3 * (ladder.c_min + best * ladder.c_lsb)));
            if (std::abs(f - target) < std::abs(fb - target)) best = code;
        }
        return best;
    };
    CHECK(tune_code(100e3, ladder).code == brute(100e3));
    for (int i = 0; i < 400; ++i) {
        const double target = 40e3 * std::pow(10.0, i / 400.0);
        CHECK(tune_code(target, ladder).code == brute(target));
    }
    for (int bits : {10, 12}) {
        LadderConfig fine = ladder;
        fine.n_bits = bits;
        fine.c_lsb = 16.5e-9 / ((1 << bits) - 1);
        const auto t = tune_code(58e3, fine);
        CHECK(std::abs(t.achieved_f - 58e3) < std::abs(fine.frequency(t.code + 1) - 58e3));
        CHECK(std::abs(t.achieved_f - 58e3) <= std::abs(fine.frequency(t.code - 1) - 58e3));
    }
}

TEST_CASE("exact ladder frequencies tune exactly and fall with code") {
    const LadderConfig ladder;
    for (std::uint32_t code : {0u, 1u, 17u, 128u, 255u}) {
        const auto t = tune_code(ladder.frequency(code), ladder);
        CHECK(t.code == code);
        CHECK(t.achieved_f == ladder.frequency(code));
    }
    for (std::uint32_t code = 1; code <= ladder.max_code(); ++code) {
        CHECK(ladder.frequency(code) < ladder.frequency(code - 1));
    }
}

TEST_CASE("out-of-range targets report the nearest reachable frequency") {
    const LadderConfig ladder;
    try {
        tune_code(450e3, ladder);
        FAIL("expected RangeError");
    } catch (const RangeError& e) {
        CHECK(e.nearest_hz() == ladder.frequency(0));
    }
    try {
        tune_code(30e3, ladder);
        FAIL("expected RangeError");
    } catch (const RangeError& e) {
        CHECK(e.nearest_hz() == ladder.frequency(ladder.max_code()));
    }
    LadderConfig narrow = ladder;
    narrow.c_lsb = 1e-12;
    CHECK_THROWS_AS(tune_code(100e3, narrow), ConfigError);
}

TEST_CASE("ringdown time constant") {
    const auto t = tag(58e3, 1000, TagKind::Magnetostrictor);
    CHECK(ring_time_constant(t) == doctest::Approx(2 * 1000 / (2 * oracle::kPi * 58e3)).epsilon(1e-14));
    CHECK(ring_time_constant(t) == doctest::Approx(5.49e-3).epsilon(1e-3));
}

TEST_CASE("captures") {
    const LadderConfig ladder;
    SUBCASE("empty scene holds only the noise floor") {
        const auto cap = excite_and_capture({}, 100e3, 6e-3, ladder);
        double rms = 0;
        for (double s : cap.samples) rms += s * s;
        rms = std::sqrt(rms / cap.samples.size());
        CHECK(rms == doctest::Approx(1e-4).epsilon(0.05));
        CHECK(detect(cap, cap.t_off, 1e-3) < 1e-5);
        CHECK(cap.sample_rate >= 4 * cap.excite_freq);
    }
    SUBCASE("high-Q tags outlast low-Q tags") {
        const auto lo = tag(58e3, 50);
        const auto hi = tag(58e3, 1000, TagKind::Magnetostrictor);
        const auto f = tune_code(58e3, ladder).achieved_f;
        auto lo_t = lo, hi_t = hi;
        lo_t.f0 = hi_t.f0 = f; // same on-tune excitation for both
        const sweepchain::TagDrive dl{&lo_t, 0.8, 0.0};
        const sweepchain::TagDrive dh{&hi_t, 0.8, 0.0};
        const auto cl = excite_and_capture(std::span(&dl, 1), f, 6e-3, ladder);
        const auto ch = excite_and_capture(std::span(&dh, 1), f, 6e-3, ladder);
        const double al = detect(cl, cl.t_off + 2e-3, 0.2e-3);
        const double ah = detect(ch, ch.t_off + 2e-3, 0.2e-3);
        CHECK(ah > 20 * al);
        const double tau_l = ring_time_constant(lo_t), tau_h = ring_time_constant(hi_t);
        CHECK(std::exp(-2e-3 / tau_h) / std::exp(-2e-3 / tau_l) > 20);
    }
    SUBCASE("ringdown amplitude grows with Q at fixed coupling") {
        double prev = 0.0;
        for (double q : {20.0, 50.0, 100.0, 200.0, 500.0}) {
            auto t = tag(120e3, q);
            t.f0 = tune_code(120e3, ladder).achieved_f;
            const sweepchain::TagDrive d{&t, 0.5, 0.0};
            CaptureConfig quiet;
            quiet.noise_floor = 0.0;
            const auto cap = excite_and_capture(std::span(&d, 1), t.f0, 5e-3, ladder, quiet);
            const double a = detect(cap, cap.t_off + 1e-3, 0.5e-3);
            CHECK(a > prev);
            prev = a;
        }
    }
    SUBCASE("dwell bounds") {
        CHECK_THROWS_AS(excite_and_capture({}, 100e3, 4e-3, ladder), DomainError);
        CHECK_THROWS_AS(excite_and_capture({}, 100e3, 11e-3, ladder), DomainError);
    }
}

TEST_CASE("synchronous detection") {
    SUBCASE("zero capture") {
        auto cap = synthetic(100e3, 0.0, 1e-3, 0.0);
        CHECK(detect(cap, cap.t_off, 1e-3) == 0.0);
    }
    SUBCASE("decaying sinusoid matches the closed-form gate integral") {
        for (double tau : {0.3e-3, 1e-3, 5e-3}) {
            for (double phi : {0.0, 0.7, 2.0}) {
                const double f = 80e3;
                auto cap = synthetic(f, 0.6, tau, phi);
                for (double g : {0.0, 0.4e-3, 1.5e-3}) {
                    const double got = detect(cap, cap.t_off + g, 1e-3);
                    const double want =
                        analytic_gate(0.6, tau, 2 * oracle::kPi * f, phi, cap.t_off, cap.t_off + g, 1e-3);
                    CHECK(got == doctest::Approx(want).epsilon(0.02));
                }
            }
        }
    }
    SUBCASE("insensitive to the carrier phase") {
        const double ref = detect(synthetic(150e3, 0.4, 2e-3, 0.0), 0.5e-3, 2e-3);
        for (double phi = 0.1; phi < 6.3; phi += 0.5) {
            CHECK(detect(synthetic(150e3, 0.4, 2e-3, phi), 0.5e-3, 2e-3) == doctest::Approx(ref).epsilon(1e-3));
        }
    }
    SUBCASE("detuned tag by five bandwidths barely registers") {
        const LadderConfig ladder;
        CaptureConfig quiet;
        quiet.noise_floor = 0.0;
        auto on = tag(100e3, 50);
        on.f0 = tune_code(100e3, ladder).achieved_f;
        auto off = on;
        off.f0 = on.f0 * (1.0 + 5.0 / 50.0);
        const sweepchain::TagDrive d_on{&on, 0.7, 0.0}, d_off{&off, 0.7, 0.0};
        const auto c_on = excite_and_capture(std::span(&d_on, 1), on.f0, 5e-3, ladder, quiet);
        const auto c_off = excite_and_capture(std::span(&d_off, 1), on.f0, 5e-3, ladder, quiet);
        const double a_on = detect(c_on, c_on.t_off, 0.5e-3);
        const double a_off = detect(c_off, c_off.t_off, 0.5e-3);
        CHECK(a_off < 0.05 * a_on);
    }
    SUBCASE("gate must sit inside the ringdown window") {
        auto cap = synthetic(100e3, 0.5, 1e-3, 0.0);
        CHECK_THROWS_AS(detect(cap, cap.t_off - 1e-5, 1e-3), DomainError);
        CHECK_THROWS_AS(detect(cap, cap.t_off, 10e-3), DomainError);
    }
}

TEST_CASE("sequential read schedule") {
    CHECK(schedule(16, 6e-3) == doctest::Approx(0.096).epsilon(1e-15));
    CHECK(schedule(0, 6e-3) == 0.0);
    CHECK(schedule(1, 5e-3) == 5e-3);
    CHECK(schedule(16, 6e-3) > 1.0 / 30.0);
    for (std::size_t n = 0; n < 40; ++n) {
        CHECK(schedule(n, 7e-3) == doctest::Approx(n * 7e-3));
        // at the fastest dwell the frame is missed from seven tags on
        CHECK((schedule(n, 5e-3) > 1.0 / 30.0) == (n >= 7));
    }
    const std::vector<TagSpec> tags(3, tag(100e3, 50));
    CHECK(schedule(tags, 10e-3) == doctest::Approx(0.03));
    CHECK_THROWS_AS(schedule(4, 4.9e-3), DomainError);
    CHECK_THROWS_AS(schedule(4, 10.1e-3), DomainError);
}
