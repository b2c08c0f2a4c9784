#include "rtag/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace rtag::tracker {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AssemblerConfig, on_threshold, off_threshold, ema_alpha, frame_period)
}

namespace rtag::tagphys {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BridgeScale, m_ref, z_norm)
}

namespace rtag::sweepchain {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SweepConfig, f_start, f_end, frame_period, bins, noise_rms, seed,
                                                osc_drift)
}

namespace rtag::trinkets {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MappingConfig, goblin_channels, goblin_chords, goblin_velocity,
                                                volume_cc, ring_channel, ring_on, ring_off, ring_velocity_gain,
                                                pengachu_channel, pengachu_sequence, pengachu_step_frames,
                                                pengachu_transpose, pengachu_velocity, cube_channel, cube_note,
                                                cube_velocity, cube_bend_semitones, pez_choral_channel,
                                                pez_choral_note, pez_brass_channel, pez_brass_note, pez_velocity,
                                                pez_trigger, pez_rearm, pez_filter_cc, porcupine_semitones, pig_cc,
                                                eyeball_channel, eyeball_ccs, eyeball_full_scale, triangle_channel,
                                                bend_range_semitones, cc_slew)
}

namespace rtag::harness {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReaderConfig, shape_window, threshold, min_sep, assembler, bridge,
                                                calibrate, calibration_gate, calibration_interval, presence_floor)

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) { throw SceneError(where + ": " + what); }

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(where, "unknown field '" + key + "'");
    }
}

// Rejects keys the defaults do not know about, then converts.
template <class T>
T strict_struct(const json& j, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    const json known = T{};
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) fail(where, "unknown field '" + key + "'");
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        fail(where, std::string("wrong value type (") + e.what() + ")");
    }
}

double number(const json& j, const char* key, const std::string& where, std::optional<double> fallback = {}) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        fail(where, std::string("missing field '") + key + "'");
    }
    if (!j[key].is_number()) fail(where, std::string("field '") + key + "' must be a number");
    const double v = j[key].get<double>();
    if (!std::isfinite(v)) fail(where, std::string("field '") + key + "' must be finite");
    return v;
}

int integer(const json& j, const char* key, const std::string& where, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer()) fail(where, std::string("field '") + key + "' must be an integer");
    return j[key].get<int>();
}

std::string text(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string()) fail(where, std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json quat_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

tagphys::CoilSpec coil_from_json(const json& j) {
    const std::string where = "coil";
    check_keys(j, {"type", "radius", "length", "turns", "loops", "segments", "axis", "drive_current", "center"}, where);
    tagphys::CoilSpec coil;
    const auto type = text(j, "type", where);
    if (type == "solenoid") {
        if (j.contains("axis")) fail(where, "a solenoid lies along +z; 'axis' applies to helmholtz pairs");
        tagphys::Solenoid s;
        s.radius = number(j, "radius", where, s.radius);
        s.length = number(j, "length", where, s.length);
        s.turns = integer(j, "turns", where, s.turns);
        s.loops = integer(j, "loops", where, s.loops);
        s.segments = integer(j, "segments", where, s.segments);
        coil.geometry = s;
    } else if (type == "helmholtz") {
        if (j.contains("length") || j.contains("loops")) fail(where, "helmholtz pairs take radius, axis, turns, segments");
        tagphys::HelmholtzPair h;
        h.radius = number(j, "radius", where, h.radius);
        if (j.contains("axis")) h.axis = vec3_from_json(j["axis"], where + ".axis").normalized();
        h.turns = integer(j, "turns", where, h.turns);
        h.segments = integer(j, "segments", where, h.segments);
        coil.geometry = h;
    } else {
        fail(where, "type must be 'solenoid' or 'helmholtz'");
    }
    coil.drive_current = number(j, "drive_current", where, coil.drive_current);
    if (j.contains("center")) coil.center = vec3_from_json(j["center"], where + ".center");
    return coil;
}

json coil_to_json(const tagphys::CoilSpec& coil) {
    json j;
    if (const auto* s = std::get_if<tagphys::Solenoid>(&coil.geometry)) {
        j["type"] = "solenoid";
        j["radius"] = s->radius;
        j["length"] = s->length;
        j["turns"] = s->turns;
        j["loops"] = s->loops;
        j["segments"] = s->segments;
    } else {
        const auto& h = std::get<tagphys::HelmholtzPair>(coil.geometry);
        j["type"] = "helmholtz";
        j["radius"] = h.radius;
        j["axis"] = vec_json(h.axis);
        j["turns"] = h.turns;
        j["segments"] = h.segments;
    }
    j["drive_current"] = coil.drive_current;
    j["center"] = vec_json(coil.center);
    return j;
}

// Maps a byte offset in `text` to a 1-based line and column.
std::pair<int, int> line_column(std::string_view text, std::size_t offset) {
    int line = 1;
    int column = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

} // namespace

Vec3 vec3_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) fail(where, "expected [x, y, z]");
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
        if (!j[i].is_number()) fail(where, "vector components must be numbers");
        v[i] = j[i].get<double>();
    }
    if (!v.allFinite()) fail(where, "vector components must be finite");
    return v;
}

// [w, x, y, z], renormalised when within 1e-3 of unit length.
Quat quat_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4) fail(where, "expected quaternion [w, x, y, z]");
    double c[4];
    for (int i = 0; i < 4; ++i) {
        if (!j[i].is_number()) fail(where, "quaternion components must be numbers");
        c[i] = j[i].get<double>();
    }
    Quat q(c[0], c[1], c[2], c[3]);
    if (!std::isfinite(q.norm()) || std::abs(q.norm() - 1.0) > 1e-3) fail(where, "quaternion must have unit norm");
    q.normalize();
    return q;
}

bool Volume::contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

Vec3 Volume::clamp(const Vec3& p) const { return p.cwiseMax(min).cwiseMin(max); }

Pose Trajectory::pose_at(double t) const {
    if (keys.empty()) return {};
    if (t <= keys.front().time) return {keys.front().position, keys.front().orientation};
    if (t >= keys.back().time) return {keys.back().position, keys.back().orientation};
    const auto hi = std::upper_bound(keys.begin(), keys.end(), t,
                                     [](double v, const Keyframe& k) { return v < k.time; });
    const auto lo = hi - 1;
    const double u = (t - lo->time) / (hi->time - lo->time);
    Pose p;
    p.position = (1.0 - u) * lo->position + u * hi->position;
    p.orientation = lo->orientation.slerp(u, hi->orientation).normalized();
    return p;
}

std::optional<double> Trajectory::param_at(double t) const {
    if (keys.empty()) return std::nullopt;
    if (t <= keys.front().time) return keys.front().param;
    if (t >= keys.back().time) return keys.back().param;
    const auto hi = std::upper_bound(keys.begin(), keys.end(), t,
                                     [](double v, const Keyframe& k) { return v < k.time; });
    const auto lo = hi - 1;
    if (lo->param && hi->param) {
        const double u = (t - lo->time) / (hi->time - lo->time);
        return (1.0 - u) * *lo->param + u * *hi->param;
    }
    return lo->param ? lo->param : hi->param;
}

std::size_t Scene::tag_count() const {
    std::size_t n = 0;
    for (const auto& o : objects) n += o.spec.tags.size();
    return n;
}

std::vector<tagphys::ObjectSpec> Scene::specs() const {
    std::vector<tagphys::ObjectSpec> out;
    out.reserve(objects.size());
    for (const auto& o : objects) out.push_back(o.spec);
    return out;
}

void Scene::validate() const {
    auto wrap = [](const std::string& where, auto&& fn) {
        try {
            fn();
        } catch (const SceneError&) {
            throw;
        } catch (const Error& e) {
            fail(where, e.what());
        }
    };
    wrap("coil", [&] { coil.validate(); });
    wrap("sweep", [&] { sweep.validate(); });
    wrap("reader.assembler", [&] { reader.assembler.validate(); });
    if (reader.shape_window < 3 || reader.shape_window % 2 == 0) fail("reader", "shape_window must be odd and at least 3");
    if (!(reader.threshold > 0.0)) fail("reader", "threshold must be positive");
    if (reader.min_sep < 1) fail("reader", "min_sep must be at least 1");
    if (!(reader.bridge.m_ref > 0.0 && reader.bridge.z_norm > 0.0)) fail("reader.bridge", "scales must be positive");
    if (reader.calibration_gate < 0.01) fail("reader", "calibration_gate must be at least 10 ms");
    if (reader.calibration_interval < 0) fail("reader", "calibration_interval must be non-negative");
    if (!(volume.min.array() < volume.max.array()).all()) fail("volume", "min must be below max on every axis");
    wrap("mapping", [&] { mapping.validate(); });

    std::set<std::string> names;
    std::size_t goblins = 0;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const auto& o = objects[i];
        const std::string where = "objects[" + std::to_string(i) + "]";
        wrap(where, [&] { o.spec.validate(); });
        if (!names.insert(o.spec.name).second) fail(where, "object names must be unique ('" + o.spec.name + "')");
        wrap(where + ".pose", [&] { o.pose.validate(); });
        if (!(o.param >= 0.0 && o.param <= 1.0)) fail(where, "param must lie in [0, 1]");
        for (const auto& mt : o.spec.tags) {
            const double lo = mt.tag.f0 * (1.0 - mt.tag.alpha);
            if (lo < sweep.f_start || mt.tag.f0 > sweep.f_end)
                fail(where, "tag '" + mt.tag.id + "' resonance range lies outside the sweep");
        }
        if (o.spec.role == ObjectRole::Goblin) ++goblins;
        if (o.trajectory) {
            for (std::size_t k = 1; k < o.trajectory->keys.size(); ++k)
                if (!(o.trajectory->keys[k].time > o.trajectory->keys[k - 1].time))
                    fail(where, "keyframe times must be strictly increasing per object ('" + o.spec.name + "')");
            for (const auto& key : o.trajectory->keys)
                if (key.param && !(*key.param >= 0.0 && *key.param <= 1.0))
                    fail(where, "keyframe param must lie in [0, 1]");
        }
    }
    if (goblins > mapping.goblin_channels.size()) fail("objects", "more goblins than mapping goblin channels");
    const auto all = specs();
    try {
        tracker::TagRegistry::build(all, sweep);
    } catch (const ConfigError& e) {
        fail("objects", std::string("tag f0 values must be separated by their guard bands (") + e.what() + ")");
    }
}

SceneObject object_from_json(const json& j, const std::string& where) {
    check_keys(j, {"name", "role", "reference_distance", "tags", "param_tag", "pose", "param"}, where);
    SceneObject obj;
    auto& spec = obj.spec;
    spec.name = text(j, "name", where);
    const auto role = role_from_string(text(j, "role", where));
    if (!role) fail(where, "unknown role '" + j["role"].get<std::string>() + "'");
    spec.role = *role;
    spec.reference_distance = number(j, "reference_distance", where, spec.reference_distance);
    if (!j.contains("tags") || !j["tags"].is_array()) fail(where, "field 'tags' must be an array");
    for (std::size_t t = 0; t < j["tags"].size(); ++t) {
        const auto& jt = j["tags"][t];
        const std::string tw = where + ".tags[" + std::to_string(t) + "]";
        check_keys(jt, {"id", "kind", "f0", "q", "l_tag", "alpha", "normal"}, tw);
        tagphys::MountedTag mt;
        mt.tag.id = text(jt, "id", tw);
        const std::string kind = jt.contains("kind") ? text(jt, "kind", tw) : "lc";
        if (kind == "lc") {
            mt.tag.kind = tagphys::TagKind::LC;
        } else if (kind == "magnetostrictor") {
            mt.tag.kind = tagphys::TagKind::Magnetostrictor;
        } else {
            fail(tw, "kind must be 'lc' or 'magnetostrictor'");
        }
        mt.tag.f0 = number(jt, "f0", tw);
        mt.tag.q = number(jt, "q", tw);
        mt.tag.l_tag = number(jt, "l_tag", tw, mt.tag.l_tag);
        mt.tag.alpha = number(jt, "alpha", tw, 0.0);
        if (jt.contains("normal")) {
            const Vec3 n = vec3_from_json(jt["normal"], tw + ".normal");
            if (!(n.norm() > 0.0)) fail(tw, "normal must be non-zero");
            mt.normal = n.normalized();
        }
        spec.tags.push_back(mt);
    }
    if (j.contains("param_tag")) {
        if (!j["param_tag"].is_number_unsigned()) fail(where, "param_tag must be a tag index");
        spec.param_tag = j["param_tag"].get<std::size_t>();
    }
    if (j.contains("pose")) {
        const auto& jp = j["pose"];
        check_keys(jp, {"position", "quaternion"}, where + ".pose");
        if (jp.contains("position")) obj.pose.position = vec3_from_json(jp["position"], where + ".pose.position");
        if (jp.contains("quaternion")) obj.pose.orientation = quat_from_json(jp["quaternion"], where + ".pose.quaternion");
    }
    obj.param = number(j, "param", where, 0.0);
    return obj;
}

json object_to_json(const SceneObject& obj) {
    json j;
    j["name"] = obj.spec.name;
    j["role"] = std::string(to_string(obj.spec.role));
    j["reference_distance"] = obj.spec.reference_distance;
    j["tags"] = json::array();
    for (const auto& mt : obj.spec.tags) {
        json t;
        t["id"] = mt.tag.id;
        t["kind"] = mt.tag.kind == tagphys::TagKind::LC ? "lc" : "magnetostrictor";
        t["f0"] = mt.tag.f0;
        t["q"] = mt.tag.q;
        t["l_tag"] = mt.tag.l_tag;
        t["alpha"] = mt.tag.alpha;
        t["normal"] = vec_json(mt.normal);
        j["tags"].push_back(t);
    }
    if (obj.spec.param_tag) j["param_tag"] = *obj.spec.param_tag;
    j["pose"] = {{"position", vec_json(obj.pose.position)}, {"quaternion", quat_json(obj.pose.orientation)}};
    j["param"] = obj.param;
    return j;
}

Scene scene_from_json(const json& j) {
    check_keys(j, {"name", "coil", "sweep", "reader", "volume", "mapping", "objects", "trajectories"}, "scene");
    Scene scene;
    scene.name = j.contains("name") ? text(j, "name", "scene") : "unnamed";
    if (j.contains("coil")) scene.coil = coil_from_json(j["coil"]);
    if (j.contains("sweep")) scene.sweep = strict_struct<sweepchain::SweepConfig>(j["sweep"], "sweep");
    if (j.contains("reader")) {
        const auto& jr = j["reader"];
        if (jr.is_object()) {
            if (jr.contains("assembler")) strict_struct<tracker::AssemblerConfig>(jr["assembler"], "reader.assembler");
            if (jr.contains("bridge")) strict_struct<tagphys::BridgeScale>(jr["bridge"], "reader.bridge");
        }
        scene.reader = strict_struct<ReaderConfig>(jr, "reader");
    }
    scene.reader.assembler.frame_period = scene.sweep.frame_period;
    if (j.contains("volume")) {
        check_keys(j["volume"], {"min", "max"}, "volume");
        scene.volume.min = vec3_from_json(j["volume"].value("min", json::array({-0.15, -0.15, 0.03})), "volume.min");
        scene.volume.max = vec3_from_json(j["volume"].value("max", json::array({0.15, 0.15, 0.33})), "volume.max");
    }
    if (j.contains("mapping")) scene.mapping = strict_struct<trinkets::MappingConfig>(j["mapping"], "mapping");
    if (j.contains("objects")) {
        if (!j["objects"].is_array()) fail("scene", "field 'objects' must be an array");
        for (std::size_t i = 0; i < j["objects"].size(); ++i)
            scene.objects.push_back(object_from_json(j["objects"][i], "objects[" + std::to_string(i) + "]"));
    }
    if (j.contains("trajectories")) {
        if (!j["trajectories"].is_array()) fail("scene", "field 'trajectories' must be an array");
        for (std::size_t i = 0; i < j["trajectories"].size(); ++i) {
            const auto& jk = j["trajectories"][i];
            const std::string where = "trajectories[" + std::to_string(i) + "]";
            check_keys(jk, {"time_s", "object", "position", "quaternion", "param"}, where);
            const auto name = text(jk, "object", where);
            auto it = std::find_if(scene.objects.begin(), scene.objects.end(),
                                   [&](const SceneObject& o) { return o.spec.name == name; });
            if (it == scene.objects.end()) fail(where, "keyframe names unknown object '" + name + "'");
            Keyframe key;
            key.time = number(jk, "time_s", where);
            if (key.time < 0.0) fail(where, "time_s must be non-negative");
            if (!it->trajectory) it->trajectory = Trajectory{};
            const auto& prev = it->trajectory->keys;
            key.position = jk.contains("position") ? vec3_from_json(jk["position"], where + ".position")
                                                   : (prev.empty() ? it->pose.position : prev.back().position);
            key.orientation = jk.contains("quaternion") ? quat_from_json(jk["quaternion"], where + ".quaternion")
                                                        : (prev.empty() ? it->pose.orientation : prev.back().orientation);
            if (jk.contains("param")) key.param = number(jk, "param", where);
            it->trajectory->keys.push_back(key);
        }
    }
    scene.validate();
    return scene;
}

Scene parse_scene(std::string_view text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, column] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        std::string msg = e.what();
        if (const auto pos = msg.find("parse error"); pos != std::string::npos) msg = msg.substr(pos);
        throw SceneError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + msg, line, column);
    }
    try {
        return scene_from_json(j);
    } catch (const SceneError& e) {
        throw SceneError(source + ": " + e.what());
    }
}

Scene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open scene " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scene(ss.str(), path.string());
}

json scene_to_json(const Scene& scene) {
    json j;
    j["name"] = scene.name;
    j["coil"] = coil_to_json(scene.coil);
    j["sweep"] = scene.sweep;
    j["reader"] = scene.reader;
    j["volume"] = {{"min", vec_json(scene.volume.min)}, {"max", vec_json(scene.volume.max)}};
    j["mapping"] = scene.mapping;
    j["objects"] = json::array();
    j["trajectories"] = json::array();
    for (const auto& o : scene.objects) {
        j["objects"].push_back(object_to_json(o));
        if (!o.trajectory) continue;
        for (const auto& k : o.trajectory->keys) {
            json jk = {{"time_s", k.time}, {"object", o.spec.name}, {"position", vec_json(k.position)},
                       {"quaternion", quat_json(k.orientation)}};
            if (k.param) jk["param"] = *k.param;
            j["trajectories"].push_back(jk);
        }
    }
    return j;
}

json scene_summary(const Scene& scene) {
    json objects = json::array();
    for (const auto& o : scene.objects) {
        json tags = json::array();
        for (const auto& mt : o.spec.tags) tags.push_back({{"id", mt.tag.id}, {"f0", mt.tag.f0}});
        objects.push_back({{"name", o.spec.name}, {"role", std::string(to_string(o.spec.role))}, {"tags", tags}});
    }
    return {{"name", scene.name},
            {"objects", scene.objects.size()},
            {"tags", scene.tag_count()},
            {"bins", scene.sweep.bins},
            {"f_start", scene.sweep.f_start},
            {"f_end", scene.sweep.f_end},
            {"frame_period", scene.sweep.frame_period},
            {"object_list", objects}};
}

} // namespace rtag::harness
