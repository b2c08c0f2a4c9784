#include "doctest.h"
#include "oracle.hpp"

#include "rtag/error.hpp"
#include "rtag/tagphys.hpp"

#include <random>

using namespace rtag;
using namespace rtag::tagphys;

namespace {

CoilSpec helmholtz(double radius = 0.15, int turns = 20, double current = 1.0) {
    CoilSpec c;
    c.geometry = HelmholtzPair{radius, Vec3::UnitZ(), turns, 256};
    c.drive_current = current;
    return c;
}

CoilSpec solenoid(double radius = 0.2, double length = 0.05, int turns = 30) {
    CoilSpec c;
    c.geometry = Solenoid{radius, length, turns, 32, 256};
    return c;
}

TagSpec lc(double f0, double q, double alpha = 0.0) {
    TagSpec t;
    t.id = "t";
    t.f0 = f0;
    t.q = q;
    t.alpha = alpha;
    return t;
}

} // namespace

TEST_CASE("Helmholtz centre field matches the textbook formula and the elliptic oracle") {
    const auto coil = helmholtz(0.15, 20, 1.0);
    const double b = field_at(coil, Vec3::Zero()).norm();
    const double textbook = oracle::helmholtz_center(0.15, 20, 1.0);
    const double exact = oracle::helmholtz_field(0.15, Vec3::UnitZ(), 20, 1.0, Vec3::Zero()).norm();
    CHECK(std::abs(b / textbook - 1.0) < 0.005);
    CHECK(std::abs(b / exact - 1.0) < 0.005);
    CHECK(std::abs(exact / textbook - 1.0) < 1e-12);
}

TEST_CASE("field matches the elliptic oracle off axis") {
    const auto sol = solenoid();
    const auto hh = helmholtz(0.3);
    for (const Vec3 p : {Vec3(0.05, 0.02, 0.1), Vec3(-0.1, 0.07, 0.2), Vec3(0.0, 0.12, -0.08)}) {
        const Vec3 want = oracle::solenoid_field(0.2, 0.05, 30, 32, 1.0, p);
        CHECK((field_at(sol, p) - want).norm() / want.norm() < 1e-6);
        const Vec3 want_h = oracle::helmholtz_field(0.3, Vec3::UnitZ(), 20, 1.0, p);
        CHECK((field_at(hh, p) - want_h).norm() / want_h.norm() < 1e-6);
    }
}

TEST_CASE("mirrored points have equal field magnitude") {
    for (const auto& coil : {solenoid(), helmholtz()}) {
        const CoilField f(coil);
        for (const Vec3 p : {Vec3(0.03, 0.01, 0.07), Vec3(0.1, -0.05, 0.3), Vec3(0.0, 0.0, 0.02)}) {
            const Vec3 m(p.x(), p.y(), -p.z());
            CHECK(f.at(p).norm() == doctest::Approx(f.at(m).norm()).epsilon(1e-12));
        }
    }
}

TEST_CASE("solenoid far field falls as the inverse cube on axis") {
    const auto coil = solenoid(0.2, 0.05, 30);
    const double d = 10 * 0.2;
    const double ratio = field_at(coil, Vec3(0, 0, 2 * d)).norm() / field_at(coil, Vec3(0, 0, d)).norm();
    const double exact = oracle::solenoid_field(0.2, 0.05, 30, 32, 1.0, Vec3(0, 0, 2 * d)).norm() /
                         oracle::solenoid_field(0.2, 0.05, 30, 32, 1.0, Vec3(0, 0, d)).norm();
    CHECK(ratio == doctest::Approx(exact).epsilon(1e-9));
    CHECK(std::abs(ratio / 0.125 - 1.0) < 0.02);
}

TEST_CASE("field is linear in drive current") {
    auto a = solenoid();
    const Vec3 p(0.04, -0.02, 0.11);
    const Vec3 fa = field_at(a, p);
    for (double k : {2.0, 0.25, 8.0}) {
        auto b = a;
        b.drive_current = k;
        CHECK(field_at(b, p) == k * fa); // powers of two scale without rounding
    }
    auto b = a;
    b.drive_current = 3.0;
    CHECK((field_at(b, p) - 3.0 * fa).norm() <= 1e-14 * fa.norm());
}

TEST_CASE("doubling the discretisation moves |B| by less than 0.1%") {
    auto coarse = solenoid();
    auto fine = coarse;
    std::get<Solenoid>(fine.geometry).loops = 64;
    std::get<Solenoid>(fine.geometry).segments = 512;
    auto hc = helmholtz(0.3);
    auto hf = hc;
    std::get<HelmholtzPair>(hf.geometry).segments = 512;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    int checked = 0;
    while (checked < 200) {
        const Vec3 p(u(rng), u(rng), u(rng));
        bool near = false;
        for (const auto& coil : {coarse, hc}) {
            for (const auto& f : filaments(coil)) {
                const Vec3 d = p - f.center;
                const double z = d.dot(f.axis);
                if (std::hypot((d - z * f.axis).norm() - f.radius, z) < 0.02) near = true;
            }
        }
        // The coarse solenoid's ends are stacks of discrete loops; stay clear of them too.
        if (near || std::hypot(std::hypot(p.x(), p.y()) - 0.2, std::max(0.0, std::abs(p.z()) - 0.025)) < 0.02) {
            continue;
        }
        const double a = field_at(coarse, p).norm();
        const double b = field_at(fine, p).norm();
        CHECK(std::abs(a / b - 1.0) < 1e-3);
        const double ha = field_at(hc, p).norm();
        const double hb = field_at(hf, p).norm();
        CHECK(std::abs(ha / hb - 1.0) < 1e-3);
        ++checked;
    }
}

TEST_CASE("points on a winding are rejected") {
    const auto coil = solenoid();
    CHECK_THROWS_AS(field_at(coil, Vec3(0.2, 0.0, 0.0)), SingularityError);
    CHECK_THROWS_AS(field_at(coil, Vec3(0.0, 0.2005, -0.02)), SingularityError);
    CHECK_NOTHROW(field_at(coil, Vec3(0.0, 0.21, 0.0)));
}

TEST_CASE("coupling examples") {
    const auto coil = solenoid();
    const CouplingModel model(coil);
    SUBCASE("orthogonal normal gives zero") {
        const Vec3 p(0.05, 0.03, 0.1);
        const Vec3 b = model.field(p);
        const Vec3 n = b.unitOrthogonal();
        CHECK(std::abs(model.coupling(n, p)) < 1e-12);
    }
    SUBCASE("aligned at the reference point gives one") {
        const Vec3 b = model.field(model.reference_point());
        CHECK(model.coupling(b.normalized(), model.reference_point()) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("far field on axis scales by 1/8 when distance doubles") {
        const double d = 2.0;
        const double c1 = model.coupling(Vec3::UnitZ(), Vec3(0, 0, d));
        const double c2 = model.coupling(Vec3::UnitZ(), Vec3(0, 0, 2 * d));
        const double exact = oracle::solenoid_field(0.2, 0.05, 30, 32, 1.0, Vec3(0, 0, 2 * d)).z() /
                             oracle::solenoid_field(0.2, 0.05, 30, 32, 1.0, Vec3(0, 0, d)).z();
        CHECK(c2 / c1 == doctest::Approx(exact).epsilon(1e-9));
        CHECK(std::abs(c2 / c1 / 0.125 - 1.0) < 0.02);
    }
    SUBCASE("coupling is bounded by the field ratio") {
        std::mt19937_64 rng(3);
        for (int i = 0; i < 50; ++i) {
            const Vec3 p(0.1 * (i % 5) - 0.2, 0.01 * i - 0.25, 0.005 * i + 0.03);
            const Vec3 n = oracle::random_rotation(rng) * Vec3::UnitZ();
            CHECK(std::abs(model.coupling(n, p)) <= model.field_ratio(p) * (1 + 1e-12));
        }
    }
    CHECK_THROWS_AS(model.coupling(Vec3(1, 1, 0), Vec3(0, 0, 0.1)), DomainError);
}

TEST_CASE("orthonormal triad captures the whole field (Parseval)") {
    const auto coil = solenoid();
    const CouplingModel model(coil);
    const Vec3 p(0.07, -0.04, 0.12);
    const double s = model.field_ratio(p);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        const Mat3 r = oracle::random_rotation(rng).toRotationMatrix();
        double sum = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double c = model.coupling(r.col(k), p);
            sum += c * c;
        }
        CHECK(std::abs(sum / (s * s) - 1.0) < 1e-9);
    }
}

TEST_CASE("reflected impedance examples") {
    const auto tag = lc(100e3, 50);
    const double m_ref = 1e-5;
    SUBCASE("purely real at resonance") {
        const auto z = reflected_impedance(tag, 0.7, tag.f0, m_ref);
        const double w0 = 2 * kPi * tag.f0;
        const double m = 0.7 * m_ref;
        CHECK(std::abs(z.imag()) < 1e-9 * std::abs(z.real()));
        CHECK(z.real() == doctest::Approx(w0 * w0 * m * m / tag.resistance()).epsilon(1e-12));
    }
    SUBCASE("matches the first-principles oracle") {
        for (double f : {41e3, 90e3, 100e3, 101e3, 350e3}) {
            const auto z = reflected_impedance(tag, 0.3, f, m_ref);
            const auto o = oracle::reflected(100e3, 50, 1e-3, 0.3 * m_ref, f);
            CHECK(std::abs(z - o) <= 1e-12 * std::abs(o));
        }
    }
    SUBCASE("zero coupling reflects nothing") {
        for (double f : {40e3, 100e3, 400e3}) CHECK(std::abs(reflected_impedance(tag, 0.0, f, m_ref)) == 0.0);
    }
    SUBCASE("half-power bandwidth is f0/Q") {
        // Dense scan for the two frequencies where |Z_r| falls to max/sqrt(2).
        const double peak = std::abs(reflected_impedance(tag, 1.0, tag.f0, m_ref));
        double lo = 0.0, hi = 0.0;
        const int n = 200001;
        for (int i = 0; i < n; ++i) {
            const double f = 90e3 + 20e3 * i / (n - 1);
            const bool above = std::abs(reflected_impedance(tag, 1.0, f, m_ref)) >= peak / std::sqrt(2.0);
            if (above && lo == 0.0) lo = f;
            if (above) hi = f;
        }
        CHECK(std::abs((hi - lo) / (tag.f0 / tag.q) - 1.0) < 0.05);
    }
    CHECK_THROWS_AS(reflected_impedance(tag, 1.0, 0.0, m_ref), DomainError);
}

TEST_CASE("|Z_r| peaks within half a bandwidth of the effective resonance") {
    for (double q : {20.0, 50.0, 100.0, 200.0}) {
        for (double f0 : {45e3, 120e3, 380e3}) {
            for (double p : {0.0, 0.6}) {
                const auto tag = lc(f0, q, 0.1);
                const double fe = effective_f0(tag, p);
                const double arg = oracle::dense_argmax(
                    [&](double f) { return std::abs(reflected_impedance(tag, 1.0, f, 1e-5, p)); },
                    fe * 0.95, fe * 1.05, 100001);
                CHECK(std::abs(arg - fe) < 0.5 * fe / q);
            }
        }
    }
}

TEST_CASE("effective resonance follows the detune law") {
    const auto tag = lc(200e3, 50, 0.1);
    CHECK(effective_f0(tag, 0.0) == 200e3);
    CHECK(effective_f0(tag, 0.5) == doctest::Approx(190e3).epsilon(1e-15));
    CHECK(effective_f0(lc(150e3, 50, 0.0), 0.8) == 150e3);
    double prev = effective_f0(tag, 0.0);
    for (int i = 1; i <= 100; ++i) {
        const double f = effective_f0(tag, i / 100.0);
        CHECK(f <= prev);
        prev = f;
    }
    CHECK_THROWS_AS(effective_f0(tag, -0.01), DomainError);
    CHECK_THROWS_AS(effective_f0(tag, 1.01), DomainError);
}

TEST_CASE("tag and object validation") {
    auto t = lc(100e3, 50);
    CHECK(t.capacitance() == doctest::Approx(1.0 / std::pow(2 * kPi * 100e3, 2) / 1e-3));
    CHECK(t.resistance() == doctest::Approx(2 * kPi * 100e3 * 1e-3 / 50));
    CHECK_NOTHROW(t.validate());
    t.f0 = 30e3;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = lc(120e3, 2000);
    t.kind = TagKind::Magnetostrictor;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t.f0 = 58e3;
    CHECK_NOTHROW(t.validate());
    t.q = 500;
    CHECK_THROWS_AS(t.validate(), ConfigError);

    ObjectSpec cube;
    cube.name = "cube";
    cube.role = ObjectRole::Cube;
    cube.tags = {{lc(100e3, 50), Vec3::UnitX()}, {lc(110e3, 50), Vec3::UnitY()}, {lc(120e3, 50), Vec3::UnitZ()}};
    CHECK_NOTHROW(cube.validate());
    cube.tags[2].normal = Vec3(0, 1, 1).normalized();
    CHECK_THROWS_AS(cube.validate(), ConfigError);
    cube.tags[2].normal = Vec3::UnitZ();
    cube.tags[2].tag.f0 = 100e3;
    CHECK_THROWS_AS(cube.validate(), ConfigError);
}
