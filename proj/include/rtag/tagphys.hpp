// Forward physics: coil fields, tag resonators, coupling and the impedance a
// coupled tag reflects into the reader coil.
#pragma once

#include "rtag/types.hpp"

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace rtag::tagphys {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kMu0 = 4.0e-7 * kPi;

/// Distance to a filament below which field evaluation is refused [m].
inline constexpr double kMinFilamentDistance = 1.0e-3;

enum class TagKind { LC, Magnetostrictor };

/// Equivalent series RLC of one resonator. R and C follow from (f0, Q, l_tag).
struct TagSpec {
    std::string id;
    TagKind kind = TagKind::LC;
    double f0 = 100e3;   ///< [Hz]
    double q = 50.0;
    double l_tag = 1e-3; ///< [H]
    double alpha = 0.0;  ///< parametric detune coefficient, 0 = fixed tag

    void validate() const;
    double capacitance() const;
    double resistance() const;
    bool parametric() const noexcept { return alpha > 0.0; }
};

/// f_eff = f0 (1 - alpha p). Throws DomainError for p outside [0, 1].
double effective_f0(const TagSpec& tag, double p);

/// A tag fixed to an object, with its coil normal in object-local coordinates.
struct MountedTag {
    TagSpec tag;
    Vec3 normal = Vec3::UnitZ();
};

struct ObjectSpec {
    std::string name;
    ObjectRole role = ObjectRole::Goblin;
    std::vector<MountedTag> tags;
    /// Index into `tags` of the tag detuned by the mechanical parameter.
    std::optional<std::size_t> param_tag;
    /// Distance along the coil axis that maps to proximity 1 [m].
    double reference_distance = 0.05;

    void validate() const;
};

/// Stack of coaxial circular loops along +z about the coil center.
struct Solenoid {
    double radius = 0.2;
    double length = 0.05;
    int turns = 30;
    int loops = 32;    ///< filament loops used for integration (>= 32)
    int segments = 256; ///< quadrature nodes per loop (>= 64)
};

/// Two co-driven coaxial loops one radius apart, centred on the coil center.
struct HelmholtzPair {
    double radius = 0.3;
    Vec3 axis = Vec3::UnitZ();
    int turns = 20;
    int segments = 256;
};

struct CoilSpec {
    std::variant<Solenoid, HelmholtzPair> geometry = Solenoid{};
    double drive_current = 1.0; ///< [A]
    Vec3 center = Vec3::Zero();

    void validate() const;
    Vec3 axis() const;
};

/// One circular current filament.
struct Filament {
    Vec3 center;
    Vec3 axis;
    double radius;
    double current; ///< ampere-turns carried by this filament
};

std::vector<Filament> filaments(const CoilSpec& coil);

/// Biot-Savart field of a coil with the quadrature nodes precomputed.
///
/// Each loop is integrated with the periodic trapezoidal rule over its angle,
/// which converges geometrically for points away from the winding.
class CoilField {
public:
    explicit CoilField(const CoilSpec& coil);

    /// Field at `point` [T]. Throws SingularityError within 1 mm of a filament.
    Vec3 at(const Vec3& point) const;

    const CoilSpec& spec() const noexcept { return spec_; }

private:
    struct Node {
        Vec3 position;
        Vec3 dl_scaled; ///< mu0 I dl / 4 pi
    };
    CoilSpec spec_;
    std::vector<Filament> filaments_;
    std::vector<Node> nodes_;
};

Vec3 field_at(const CoilSpec& coil, const Vec3& point);

/// Coupling normalised so an aligned tag at the reference point reads 1.
class CouplingModel {
public:
    /// Reference point defaults to the coil center.
    explicit CouplingModel(const CoilSpec& coil, std::optional<Vec3> reference_point = std::nullopt);

    double coupling(const Vec3& tag_normal, const Vec3& point) const;
    /// |B(point)| / B_ref
    double field_ratio(const Vec3& point) const;
    Vec3 field(const Vec3& point) const { return field_.at(point); }

    double b_ref() const noexcept { return b_ref_; }
    const Vec3& reference_point() const noexcept { return reference_; }
    const CoilField& coil_field() const noexcept { return field_; }

private:
    CoilField field_;
    Vec3 reference_;
    double b_ref_;
};

/// c = (n . B(point)) / B_ref with B_ref taken at the coil center.
double coupling(const Vec3& tag_normal, const CoilSpec& coil, const Vec3& point);

/// Scale factors linking coupling to the bridge output.
struct BridgeScale {
    double m_ref = 1e-5;  ///< mutual inductance at c = 1 [H]
    double z_norm = 10.0; ///< impedance mapped to full scale 1.0 [ohm]
};

/// Z_r = (w M)^2 / (R + j(wL - 1/(wC))) with M = c m_ref and C detuned by p.
std::complex<double> reflected_impedance(const TagSpec& tag, double c, double f, double m_ref,
                                         double p = 0.0);

/// Normalised bridge magnitude at resonance for c = 1: (w_eff m_ref)^2 / (R z_norm).
double unit_peak(const TagSpec& tag, double f_eff, const BridgeScale& bridge);

} // namespace rtag::tagphys
