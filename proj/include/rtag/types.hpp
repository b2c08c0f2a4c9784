// Common value types.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>
#include <string>
#include <string_view>

namespace rtag {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// What an object does in the musical mapping.
enum class ObjectRole { Goblin, Ring, Pengachu, Cube, Pez, Porcupine, Pig, Eyeball, Triangle };

std::string_view to_string(ObjectRole role) noexcept;
std::optional<ObjectRole> role_from_string(std::string_view name) noexcept;

/// Rigid placement of an object; the quaternion maps object-local axes to world.
struct Pose {
    Vec3 position = Vec3::Zero();
    Quat orientation = Quat::Identity();

    /// Throws DomainError unless |q| = 1 within 1e-9.
    void validate() const;
};

} // namespace rtag
