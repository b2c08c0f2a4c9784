#include "rtag/types.hpp"

#include "rtag/error.hpp"

#include <array>
#include <cmath>
#include <utility>

namespace rtag {

namespace {
constexpr std::array<std::pair<ObjectRole, std::string_view>, 9> kRoleNames{{
    {ObjectRole::Goblin, "goblin"},
    {ObjectRole::Ring, "ring"},
    {ObjectRole::Pengachu, "pengachu"},
    {ObjectRole::Cube, "cube"},
    {ObjectRole::Pez, "pez"},
    {ObjectRole::Porcupine, "porcupine"},
    {ObjectRole::Pig, "pig"},
    {ObjectRole::Eyeball, "eyeball"},
    {ObjectRole::Triangle, "triangle"},
}};
} // namespace

std::string_view to_string(ObjectRole role) noexcept {
    for (const auto& [r, name] : kRoleNames) {
        if (r == role) return name;
    }
    return "unknown";
}

std::optional<ObjectRole> role_from_string(std::string_view name) noexcept {
    for (const auto& [r, n] : kRoleNames) {
        if (n == name) return r;
    }
    return std::nullopt;
}

void Pose::validate() const {
    if (!position.allFinite()) throw DomainError("pose position is not finite");
    if (std::abs(orientation.norm() - 1.0) > 1e-9) {
        throw DomainError("pose orientation is not a unit quaternion");
    }
}

} // namespace rtag
