// Scene files: coil, sweep, reader settings, tagged objects with their initial
// poses, and keyframed trajectories.
#pragma once

#include "rtag/error.hpp"
#include "rtag/sweepchain.hpp"
#include "rtag/tagphys.hpp"
#include "rtag/tracker.hpp"
#include "rtag/trinkets.hpp"
#include "rtag/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rtag::harness {

/// Parse or validation failure; line and column are 1-based, 0 when not applicable.
class SceneError : public ConfigError {
public:
    SceneError(const std::string& what, int line = 0, int column = 0)
        : ConfigError(what), line_(line), column_(column) {}
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

/// Axis-aligned box objects may be placed in.
struct Volume {
    Vec3 min = Vec3(-0.15, -0.15, 0.03);
    Vec3 max = Vec3(0.15, 0.15, 0.33);
    bool contains(const Vec3& p) const;
    Vec3 clamp(const Vec3& p) const;
};

struct ReaderConfig {
    int shape_window = 255;    ///< baseline median window [bins]
    double threshold = 1e-4;   ///< peak height, full scale 1
    int min_sep = 3;           ///< [bins]
    tracker::AssemblerConfig assembler;
    tagphys::BridgeScale bridge;
    bool calibrate = true;
    double calibration_gate = 0.1; ///< [s]
    int calibration_interval = 300; ///< frames between calibrations, 0 = only the first frame
    double presence_floor = 1e-6;  ///< triad sum below which range estimation is skipped
};

struct Keyframe {
    double time = 0.0; ///< [s]
    Vec3 position = Vec3::Zero();
    Quat orientation = Quat::Identity();
    std::optional<double> param;
};

/// Keyframes of one object; position is interpolated linearly, orientation by slerp.
struct Trajectory {
    std::vector<Keyframe> keys; ///< strictly increasing times

    /// Holds the first and last keyframes outside their span. `param` is kept
    /// when neither neighbouring keyframe sets one.
    Pose pose_at(double t) const;
    std::optional<double> param_at(double t) const;
};

struct SceneObject {
    tagphys::ObjectSpec spec;
    Pose pose;
    double param = 0.0;
    std::optional<Trajectory> trajectory;
};

struct Scene {
    std::string name;
    tagphys::CoilSpec coil;
    sweepchain::SweepConfig sweep;
    ReaderConfig reader;
    Volume volume;
    trinkets::MappingConfig mapping;
    std::vector<SceneObject> objects;

    /// Throws SceneError naming the violated invariant.
    void validate() const;
    std::size_t tag_count() const;
    std::vector<tagphys::ObjectSpec> specs() const;
};

/// Parses scene JSON; `source` names the input in error messages.
Scene parse_scene(std::string_view text, const std::string& source = "<scene>");
Scene scene_from_json(const nlohmann::json& j);
Scene load_scene(const std::filesystem::path& path);

/// Object entry in the scene schema, also used by add_object mutations.
SceneObject object_from_json(const nlohmann::json& j, const std::string& where = "object");
nlohmann::json object_to_json(const SceneObject& obj);
nlohmann::json scene_to_json(const Scene& scene);

/// `[x, y, z]` with finite components.
Vec3 vec3_from_json(const nlohmann::json& j, const std::string& where);
/// `[w, x, y, z]`, renormalised when within 1e-3 of unit length.
Quat quat_from_json(const nlohmann::json& j, const std::string& where);

/// Short description for health checks and `validate`.
nlohmann::json scene_summary(const Scene& scene);

} // namespace rtag::harness
