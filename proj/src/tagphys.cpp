#include "rtag/tagphys.hpp"

#include "rtag/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace rtag::tagphys {

namespace {

// Any unit vector orthogonal to `a`.
Vec3 orthogonal_unit(const Vec3& a) {
    const Vec3 seed = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    return (seed - seed.dot(a) * a).normalized();
}

double distance_to_filament(const Filament& f, const Vec3& point) {
    const Vec3 d = point - f.center;
    const double z = d.dot(f.axis);
    const double rho = (d - z * f.axis).norm();
    return std::hypot(rho - f.radius, z);
}

} // namespace

void TagSpec::validate() const {
    if (!(f0 >= 40e3 && f0 <= 400e3)) {
        throw ConfigError("tag '" + id + "': f0 must lie in [40 kHz, 400 kHz]");
    }
    if (!(q > 1.0)) throw ConfigError("tag '" + id + "': Q must exceed 1");
    if (!(l_tag > 0.0)) throw ConfigError("tag '" + id + "': inductance must be positive");
    if (!(alpha >= 0.0 && alpha <= 0.2)) {
        throw ConfigError("tag '" + id + "': alpha must lie in [0, 0.2]");
    }
    if (kind == TagKind::Magnetostrictor && !(f0 < 100e3 && q >= 1000.0)) {
        throw ConfigError("tag '" + id + "': magnetostrictor requires f0 < 100 kHz and Q >= 1000");
    }
}

double TagSpec::capacitance() const {
    const double w0 = 2.0 * kPi * f0;
    return 1.0 / (w0 * w0 * l_tag);
}

double TagSpec::resistance() const { return 2.0 * kPi * f0 * l_tag / q; }

double effective_f0(const TagSpec& tag, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("parameter p must lie in [0, 1]");
    return tag.f0 * (1.0 - tag.alpha * p);
}

void ObjectSpec::validate() const {
    if (name.empty()) throw ConfigError("object name must not be empty");
    if (tags.empty() || tags.size() > 3) {
        throw ConfigError("object '" + name + "': must carry 1 to 3 tags");
    }
    std::set<double> freqs;
    for (const auto& mt : tags) {
        mt.tag.validate();
        if (std::abs(mt.normal.norm() - 1.0) > 1e-9) {
            throw ConfigError("object '" + name + "': tag '" + mt.tag.id + "' normal is not unit length");
        }
        if (!freqs.insert(mt.tag.f0).second) {
            throw ConfigError("object '" + name + "': tag f0 values must be distinct");
        }
    }
    if (tags.size() == 3) {
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = i + 1; j < 3; ++j) {
                if (std::abs(tags[i].normal.dot(tags[j].normal)) >= 1e-9) {
                    throw ConfigError("object '" + name + "': triad normals must be orthonormal");
                }
            }
        }
    }
    if (param_tag) {
        if (*param_tag >= tags.size()) {
            throw ConfigError("object '" + name + "': param channel names a missing tag");
        }
        if (!tags[*param_tag].tag.parametric()) {
            throw ConfigError("object '" + name + "': param channel tag has alpha = 0");
        }
    }
    if (!(reference_distance > 0.0)) {
        throw ConfigError("object '" + name + "': reference distance must be positive");
    }
}

void CoilSpec::validate() const {
    if (!(drive_current > 0.0)) throw ConfigError("coil drive current must be positive");
    if (!center.allFinite()) throw ConfigError("coil center must be finite");
    std::visit(
        [](const auto& g) {
            using G = std::decay_t<decltype(g)>;
            if (!(g.radius > 0.0) || g.turns <= 0) {
                throw ConfigError("coil radius and turns must be positive");
            }
            if (g.segments < 64) throw ConfigError("coil loops need at least 64 segments");
            if constexpr (std::is_same_v<G, Solenoid>) {
                if (!(g.length > 0.0)) throw ConfigError("solenoid length must be positive");
                if (g.loops < 32) throw ConfigError("solenoid needs at least 32 filament loops");
            } else {
                if (std::abs(g.axis.norm() - 1.0) > 1e-9) {
                    throw ConfigError("Helmholtz axis must be a unit vector");
                }
            }
        },
        geometry);
}

Vec3 CoilSpec::axis() const {
    if (const auto* h = std::get_if<HelmholtzPair>(&geometry)) return h->axis;
    return Vec3::UnitZ();
}

std::vector<Filament> filaments(const CoilSpec& coil) {
    std::vector<Filament> out;
    if (const auto* s = std::get_if<Solenoid>(&coil.geometry)) {
        const double per_loop = coil.drive_current * s->turns / s->loops;
        out.reserve(static_cast<std::size_t>(s->loops));
        for (int k = 0; k < s->loops; ++k) {
            const double z = -0.5 * s->length + (k + 0.5) * s->length / s->loops;
            out.push_back({coil.center + z * Vec3::UnitZ(), Vec3::UnitZ(), s->radius, per_loop});
        }
    } else {
        const auto& h = std::get<HelmholtzPair>(coil.geometry);
        const double current = coil.drive_current * h.turns;
        for (double side : {-0.5, 0.5}) {
            out.push_back({coil.center + side * h.radius * h.axis, h.axis, h.radius, current});
        }
    }
    return out;
}

CoilField::CoilField(const CoilSpec& coil) : spec_(coil), filaments_(filaments(coil)) {
    spec_.validate();
    const int segments = std::visit([](const auto& g) { return g.segments; }, coil.geometry);
    nodes_.reserve(filaments_.size() * static_cast<std::size_t>(segments));
    const double dtheta = 2.0 * kPi / segments;
    for (const auto& f : filaments_) {
        const Vec3 u = orthogonal_unit(f.axis);
        const Vec3 v = f.axis.cross(u);
        const double scale = kMu0 * f.current / (4.0 * kPi) * f.radius * dtheta;
        for (int j = 0; j < segments; ++j) {
            const double th = j * dtheta;
            const double c = std::cos(th);
            const double s = std::sin(th);
            nodes_.push_back({f.center + f.radius * (c * u + s * v), scale * (-s * u + c * v)});
        }
    }
}

Vec3 CoilField::at(const Vec3& point) const {
    for (const auto& f : filaments_) {
        if (distance_to_filament(f, point) < kMinFilamentDistance) {
            throw SingularityError("field point lies on a coil winding");
        }
    }
    Vec3 b = Vec3::Zero();
    for (const auto& n : nodes_) {
        const Vec3 r = point - n.position;
        const double r2 = r.squaredNorm();
        b += n.dl_scaled.cross(r) / (r2 * std::sqrt(r2));
    }
    return b;
}

Vec3 field_at(const CoilSpec& coil, const Vec3& point) { return CoilField(coil).at(point); }

CouplingModel::CouplingModel(const CoilSpec& coil, std::optional<Vec3> reference_point)
    : field_(coil), reference_(reference_point.value_or(coil.center)) {
    b_ref_ = field_.at(reference_).norm();
    if (!(b_ref_ > 0.0)) throw ConfigError("coupling reference point has zero field");
}

double CouplingModel::coupling(const Vec3& tag_normal, const Vec3& point) const {
    if (std::abs(tag_normal.norm() - 1.0) > 1e-9) throw DomainError("tag normal must be unit length");
    return tag_normal.dot(field_.at(point)) / b_ref_;
}

double CouplingModel::field_ratio(const Vec3& point) const { return field_.at(point).norm() / b_ref_; }

double coupling(const Vec3& tag_normal, const CoilSpec& coil, const Vec3& point) {
    return CouplingModel(coil).coupling(tag_normal, point);
}

std::complex<double> reflected_impedance(const TagSpec& tag, double c, double f, double m_ref,
                                         double p) {
    if (!(f > 0.0)) throw DomainError("frequency must be positive");
    const double w = 2.0 * kPi * f;
    const double w_eff = 2.0 * kPi * effective_f0(tag, p);
    const double cap = 1.0 / (w_eff * w_eff * tag.l_tag);
    const double m = c * m_ref;
    const std::complex<double> z_tag(tag.resistance(), w * tag.l_tag - 1.0 / (w * cap));
    return (w * m) * (w * m) / z_tag;
}

double unit_peak(const TagSpec& tag, double f_eff, const BridgeScale& bridge) {
    const double w = 2.0 * kPi * f_eff;
    return (w * bridge.m_ref) * (w * bridge.m_ref) / (tag.resistance() * bridge.z_norm);
}

} // namespace rtag::tagphys
