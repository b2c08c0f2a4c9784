#include "rtag/pipeline.hpp"

#include "rtag/ringdown.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rtag::harness {

using nlohmann::json;

namespace {

enum Stage { kSynth, kShape, kPeaks, kTrack, kPosest, kMapping };

constexpr double kCalibrationNominalHz = 100e3;

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class F>
auto timed_stage(Stage stage, std::int64_t frame, double& ms, F&& fn) {
    const auto t0 = Clock::now();
    try {
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            ms = ms_since(t0);
        } else {
            auto r = fn();
            ms = ms_since(t0);
            return r;
        }
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(kStageNames[stage], frame, e.what());
    }
}

std::string require_string(const json& m, const char* key) {
    if (!m.contains(key) || !m[key].is_string()) throw MutationError(std::string("field '") + key + "' must be a string");
    return m[key].get<std::string>();
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

double round_sig(double v) {
    if (v == 0.0 || !std::isfinite(v)) return 0.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::strtod(buf, nullptr);
}

} // namespace

struct Pipeline::Physics {
    explicit Physics(const tagphys::CoilSpec& coil) : field(coil), range(field) {}
    tagphys::CouplingModel field;
    posest::RangeModel range;
};

Pipeline::Pipeline(Scene scene, std::uint64_t seed) : scene_(std::move(scene)), seed_(seed) {
    scene_.validate();
    scene_.sweep.seed = seed;
    physics_ = std::make_unique<Physics>(scene_.coil);
    for (std::size_t i = 0; i < scene_.objects.size(); ++i) uids_.push_back(next_uid_++);
    param_memory_.assign(scene_.objects.size(), std::nullopt);
    rebuild_registry();
}

Pipeline::~Pipeline() = default;
Pipeline::Pipeline(Pipeline&&) noexcept = default;
Pipeline& Pipeline::operator=(Pipeline&&) noexcept = default;

void Pipeline::rebuild_registry() {
    const auto specs = scene_.specs();
    registry_ = tracker::TagRegistry::build(specs, scene_.sweep);
    registry_index_.clear();
    for (std::size_t i = 0; i < registry_.size(); ++i) registry_index_[registry_[i].tag_id] = i;
    auto fresh = std::make_unique<tracker::Assembler>(registry_, scene_.reader.assembler);
    if (assembler_) fresh->adopt(*assembler_);
    assembler_ = std::move(fresh);
}

std::int64_t Pipeline::t_ms(std::int64_t frame) const {
    return std::llround(static_cast<double>(frame) * scene_.sweep.frame_period * 1000.0);
}

FrameOutput Pipeline::step() {
    FrameOutput out;
    const std::int64_t k = next_frame_;
    out.frame_index = k;
    out.timestamp = static_cast<double>(k) * scene_.sweep.frame_period;
    out.t_ms = t_ms(k);
    auto& ms = out.stage_ms;
    const auto& reader = scene_.reader;

    sweepchain::Synthesis synth = timed_stage(kSynth, k, ms[kSynth], [&] {
        std::vector<sweepchain::PlacedObject> placed;
        placed.reserve(scene_.objects.size());
        for (const auto& o : scene_.objects) {
            sweepchain::PlacedObject p{&o.spec, o.pose, o.param};
            if (o.trajectory) {
                p.pose = o.trajectory->pose_at(out.timestamp);
                if (auto param = o.trajectory->param_at(out.timestamp)) p.param = *param;
            }
            placed.push_back(p);
        }
        return sweepchain::bridge_response(placed, physics_->field, reader.bridge, scene_.sweep, k);
    });

    out.spectrum = timed_stage(kShape, k, ms[kShape], [&] { return sweepchain::shape(synth.frame, reader.shape_window); });

    out.peaks = timed_stage(kPeaks, k, ms[kPeaks], [&] {
        return tracker::find_peaks(out.spectrum, reader.threshold, reader.min_sep);
    });

    out.tracks = timed_stage(kTrack, k, ms[kTrack], [&] {
        const bool due = reader.calibration_interval > 0 ? k % reader.calibration_interval == 0 : k == 0;
        if (reader.calibrate && (due || calibration_.last_calibrated < 0))
            calibration_ = tracker::calibrate(tracker::Oscillator{scene_.sweep.osc_drift, kCalibrationNominalHz},
                                              reader.calibration_gate, k);
        const auto assoc = tracker::associate(out.peaks, registry_, calibration_, reader.bridge, k);
        return assembler_->update(k, out.timestamp, assoc);
    });

    std::vector<trinkets::ObjectState> states;
    out.estimates = timed_stage(kPosest, k, ms[kPosest], [&] {
        std::vector<ObjectEstimate> estimates;
        for (std::size_t i = 0; i < scene_.objects.size(); ++i) {
            const auto& o = scene_.objects[i];
            ObjectEstimate e;
            e.name = o.spec.name;
            e.role = o.spec.role;
            e.uid = uids_[i];
            trinkets::ObjectState s;
            s.object_id = e.uid;
            s.role = e.role;
            posest::TriadObservation triad;
            for (std::size_t t = 0; t < o.spec.tags.size(); ++t) {
                const auto& track = out.tracks.tracks[registry_index_.at(o.spec.tags[t].tag.id)];
                e.tag_amplitudes.push_back(track.amplitude);
                e.amplitude += track.amplitude;
                e.slope += track.slope;
                e.present = e.present || track.present;
                if (t < 3) {
                    triad.amplitudes[t] = track.amplitude;
                    s.tag_amplitudes[t] = track.amplitude;
                }
                if (o.spec.param_tag && *o.spec.param_tag == t && track.observed)
                    param_memory_[i] = posest::param_estimate(track.freq, o.spec.tags[t].tag);
            }
            triad.frame_index = k;
            if (e.present && e.amplitude > reader.presence_floor) {
                if (o.spec.tags.size() == 3) {
                    const auto pose = posest::pose_solve(triad, physics_->range, o.spec.reference_distance);
                    e.proximity = pose.proximity;
                    e.field_direction = pose.field_direction;
                } else {
                    e.proximity = posest::range_from_sum(e.amplitude, physics_->range, o.spec.reference_distance,
                                                         reader.presence_floor)
                                      .proximity;
                }
            }
            e.param = param_memory_[i];
            s.present = e.present;
            s.proximity = e.proximity;
            s.amplitude = e.amplitude;
            s.slope = e.slope;
            s.field_direction = e.field_direction;
            s.param = e.param.value_or(0.0);
            states.push_back(s);
            estimates.push_back(std::move(e));
        }
        return estimates;
    });

    out.events = timed_stage(kMapping, k, ms[kMapping], [&] {
        states.insert(states.end(), departed_.begin(), departed_.end());
        departed_.clear();
        auto events = std::move(pending_);
        pending_.clear();
        auto mapped = trinkets::map_frame(states, mapping_, scene_.mapping, out.t_ms);
        events.insert(events.end(), mapped.begin(), mapped.end());
        return events;
    });
    ++next_frame_;
    return out;
}

json Pipeline::apply(const json& m) {
    if (!m.is_object()) throw MutationError("mutation must be a JSON object");
    const auto op = require_string(m, "op");
    json ack{{"op", op}, {"frame_index", next_frame_}};
    auto find = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < scene_.objects.size(); ++i)
            if (scene_.objects[i].spec.name == name) return i;
        throw MutationError("no object named '" + name + "'");
    };
    try {
        if (op == "set_pose") {
            const auto i = find(require_string(m, "object"));
            if (!m.contains("position") && !m.contains("quaternion")) throw MutationError("set_pose needs position or quaternion");
            auto& obj = scene_.objects[i];
            Pose pose = obj.trajectory ? obj.trajectory->pose_at(static_cast<double>(next_frame_) * scene_.sweep.frame_period)
                                       : obj.pose;
            if (m.contains("position")) {
                const Vec3 requested = vec3_from_json(m["position"], "set_pose.position");
                const Vec3 clamped = scene_.volume.clamp(requested);
                ack["clamped"] = clamped != requested;
                pose.position = clamped;
                ack["position"] = vec_json(clamped);
            }
            if (m.contains("quaternion")) pose.orientation = quat_from_json(m["quaternion"], "set_pose.quaternion");
            if (obj.trajectory) {
                if (auto p = obj.trajectory->param_at(static_cast<double>(next_frame_) * scene_.sweep.frame_period))
                    obj.param = *p;
                obj.trajectory.reset();
            }
            obj.pose = pose;
        } else if (op == "set_param") {
            const auto i = find(require_string(m, "object"));
            if (!m.contains("value") || !m["value"].is_number()) throw MutationError("set_param needs a numeric 'value'");
            const double v = m["value"].get<double>();
            if (!(v >= 0.0 && v <= 1.0)) throw MutationError("param must lie in [0, 1]");
            auto& obj = scene_.objects[i];
            if (!obj.spec.param_tag) throw MutationError("object '" + obj.spec.name + "' has no parametric tag");
            if (obj.trajectory) {
                obj.pose = obj.trajectory->pose_at(static_cast<double>(next_frame_) * scene_.sweep.frame_period);
                obj.trajectory.reset();
            }
            obj.param = v;
        } else if (op == "add_object") {
            if (!m.contains("object")) throw MutationError("add_object needs an 'object'");
            auto obj = object_from_json(m["object"], "add_object");
            obj.pose.position = scene_.volume.clamp(obj.pose.position);
            Scene next = scene_;
            next.objects.push_back(obj);
            next.validate();
            scene_ = std::move(next);
            uids_.push_back(next_uid_++);
            param_memory_.push_back(std::nullopt);
            rebuild_registry();
            ack["uid"] = uids_.back();
        } else if (op == "remove_object") {
            const auto i = find(require_string(m, "object"));
            trinkets::ObjectState gone;
            gone.object_id = uids_[i];
            gone.role = scene_.objects[i].spec.role;
            departed_.push_back(gone);
            scene_.objects.erase(scene_.objects.begin() + static_cast<std::ptrdiff_t>(i));
            uids_.erase(uids_.begin() + static_cast<std::ptrdiff_t>(i));
            param_memory_.erase(param_memory_.begin() + static_cast<std::ptrdiff_t>(i));
            rebuild_registry();
        } else if (op == "load_scene") {
            if (!m.contains("scene")) throw MutationError("load_scene needs a 'scene'");
            Scene next = scene_from_json(m["scene"]);
            next.sweep.seed = seed_;
            auto physics = std::make_unique<Physics>(next.coil);
            pending_ = trinkets::flush(mapping_, t_ms(next_frame_));
            ack["flushed"] = pending_.size();
            trinkets::MappingState carried;
            carried.started = mapping_.started;
            carried.bend = mapping_.bend;
            carried.cc = mapping_.cc;
            carried.mode = mapping_.mode;
            mapping_ = std::move(carried);
            departed_.clear();
            scene_ = std::move(next);
            physics_ = std::move(physics);
            uids_.clear();
            for (std::size_t i = 0; i < scene_.objects.size(); ++i) uids_.push_back(next_uid_++);
            param_memory_.assign(scene_.objects.size(), std::nullopt);
            assembler_.reset();
            rebuild_registry();
            ack["scene"] = scene_.name;
        } else if (op == "set_mode") {
            if (!m.contains("mode") || !m["mode"].is_number_integer()) throw MutationError("set_mode needs an integer 'mode'");
            const int mode = m["mode"].get<int>();
            if (mode != 0 && mode != 1) throw MutationError("mode must be 0 or 1");
            mapping_.mode = mode;
        } else {
            throw MutationError("unknown op '" + op + "'");
        }
    } catch (const MutationError&) {
        throw;
    } catch (const Error& e) {
        throw MutationError(op + ": " + e.what());
    }
    return ack;
}

std::vector<trinkets::MusicEvent> Pipeline::finish() { return trinkets::flush(mapping_, t_ms(next_frame_)); }

std::vector<MutationRecord> read_mutation_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<MutationRecord> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(number);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SceneError(where + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("frame_index") || !j["frame_index"].is_number_integer() || !j.contains("mutation"))
            throw SceneError(where + ": expected {\"frame_index\": int, \"mutation\": {...}}");
        MutationRecord rec{j["frame_index"].get<std::int64_t>(), j["mutation"]};
        if (!out.empty() && rec.frame_index < out.back().frame_index)
            throw SceneError(where + ": mutation frame indices must not decrease");
        out.push_back(std::move(rec));
    }
    return out;
}

std::string mutation_log_line(const MutationRecord& rec) {
    nlohmann::ordered_json j;
    j["frame_index"] = rec.frame_index;
    j["mutation"] = rec.mutation;
    return j.dump();
}

std::int64_t frame_count(double duration, double frame_period) {
    if (!(duration >= 0.0) || !std::isfinite(duration)) throw DomainError("duration must be finite and non-negative");
    return static_cast<std::int64_t>(std::floor(duration / frame_period + 1e-9));
}

StageTiming percentiles(std::vector<double> samples) {
    StageTiming t;
    if (samples.empty()) return t;
    std::sort(samples.begin(), samples.end());
    auto at = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size()))) - 1;
        return samples[std::min(idx, samples.size() - 1)];
    };
    t.p50 = at(0.50);
    t.p95 = at(0.95);
    t.p99 = at(0.99);
    t.max = samples.back();
    return t;
}

json RunReport::to_json() const {
    json timing = json::object();
    for (const auto& [stage, t] : timing_ms)
        timing[stage] = {{"p50", t.p50}, {"p95", t.p95}, {"p99", t.p99}, {"max", t.max}};
    return {{"frames", frames}, {"events", events}, {"anomalies", anomalies}, {"timing_ms", timing}};
}

RunReport run(const Scene& scene, const RunOptions& opts) {
    Pipeline pipe(scene, opts.seed);
    const auto frames = frame_count(opts.duration, scene.sweep.frame_period);
    RunReport report;
    std::vector<std::vector<double>> stage_samples(kStageNames.size());
    std::vector<double> totals;

    const bool write = !opts.out_dir.empty();
    if (write) std::filesystem::create_directories(opts.out_dir);
    if (write && opts.dump_spectra) std::filesystem::create_directories(opts.out_dir / "spectra");
    std::optional<CaptureWriter> capture;
    if (opts.wire_capture) capture.emplace(*opts.wire_capture, scene.sweep);

    if (write && opts.dump_ringdown) {
        const auto dir = opts.out_dir / "ringdown";
        std::filesystem::create_directories(dir);
        tagphys::CouplingModel field(scene.coil);
        std::vector<sweepchain::PlacedObject> placed;
        for (const auto& o : scene.objects) {
            sweepchain::PlacedObject p{&o.spec, o.pose, o.param};
            if (o.trajectory) p.pose = o.trajectory->pose_at(0.0);
            placed.push_back(p);
        }
        const auto drives = sweepchain::tag_drives(placed, field);
        const ringdown::LadderConfig ladder;
        for (const auto& d : drives) {
            try {
                ringdown::CaptureConfig cc;
                cc.seed = opts.seed;
                const auto cap = ringdown::excite_and_capture(drives, d.tag->f0, 6e-3, ladder, cc);
                ringdown::write_capture_csv(cap, dir / (d.tag->id + ".csv"));
            } catch (const RangeError&) {
                // tag outside the ladder's tuning span: no capture
            }
        }
    }

    std::size_t next_mutation = 0;
    for (std::int64_t f = 0; f < frames; ++f) {
        while (next_mutation < opts.mutations.size() && opts.mutations[next_mutation].frame_index <= f) {
            try {
                pipe.apply(opts.mutations[next_mutation].mutation);
            } catch (const MutationError&) {
                // rejected live as well; replay keeps the same outcome
            }
            ++next_mutation;
        }
        auto out = pipe.step();
        double total = 0.0;
        for (std::size_t s = 0; s < kStageNames.size(); ++s) {
            stage_samples[s].push_back(out.stage_ms[s]);
            total += out.stage_ms[s];
        }
        totals.push_back(total);
        report.anomalies += out.tracks.anomalies.size();
        report.log.insert(report.log.end(), out.events.begin(), out.events.end());
        if (capture) capture->write(to_wire(out.frame_index, out.peaks));
        if (write && opts.dump_spectra) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%06lld.csv", static_cast<long long>(out.frame_index));
            sweepchain::write_spectrum_csv(out.spectrum, opts.out_dir / "spectra" / name);
        }
    }
    const auto tail = pipe.finish();
    report.log.insert(report.log.end(), tail.begin(), tail.end());
    report.frames = frames;
    report.events = report.log.size();
    for (std::size_t s = 0; s < kStageNames.size(); ++s) report.timing_ms[kStageNames[s]] = percentiles(stage_samples[s]);
    report.timing_ms["total"] = percentiles(totals);

    if (write) {
        trinkets::write_jsonl(report.log, opts.out_dir / "events.jsonl");
        auto j = report.to_json();
        j["scene"] = scene.name;
        j["seed"] = opts.seed;
        j["duration_s"] = opts.duration;
        std::ofstream rep(opts.out_dir / "report.json", std::ios::binary | std::ios::trunc);
        if (!rep) throw IoError("cannot write report in " + opts.out_dir.string());
        rep << j.dump(2) << '\n';
    }
    return report;
}

json frame_message(const FrameOutput& out, std::size_t spectrum_points) {
    json peaks = json::array();
    for (const auto& p : out.peaks)
        peaks.push_back({{"freq", round_sig(p.center_freq)},
                         {"amplitude", round_sig(p.amplitude)},
                         {"width", round_sig(p.width)},
                         {"merged", p.merged_flag}});
    json observations = json::array();
    for (const auto& t : out.tracks.tracks)
        observations.push_back({{"tag_id", t.tag_id},
                                {"observed", t.observed},
                                {"present", t.present},
                                {"freq", round_sig(t.freq)},
                                {"raw", round_sig(t.raw)},
                                {"amplitude", round_sig(t.amplitude)}});
    json estimates = json::array();
    for (const auto& e : out.estimates) {
        json tags = json::array();
        for (double a : e.tag_amplitudes) tags.push_back(round_sig(a));
        json j{{"object", e.name},
               {"role", std::string(to_string(e.role))},
               {"uid", e.uid},
               {"present", e.present},
               {"proximity", round_sig(e.proximity)},
               {"amplitude", round_sig(e.amplitude)},
               {"tag_amplitudes", tags}};
        if (e.role == ObjectRole::Cube || e.role == ObjectRole::Eyeball)
            j["field_direction"] = json::array({round_sig(e.field_direction.x()), round_sig(e.field_direction.y()),
                                                round_sig(e.field_direction.z())});
        j["param"] = e.param ? json(round_sig(*e.param)) : json(nullptr);
        estimates.push_back(j);
    }
    json events = json::array();
    for (const auto& ev : out.events) events.push_back(json::parse(trinkets::to_jsonl(ev)));
    json anomalies = json::array();
    for (const auto& a : out.tracks.anomalies)
        anomalies.push_back({{"freq", round_sig(a.freq)}, {"amplitude", round_sig(a.amplitude)}, {"reason", a.reason}});

    // max-pool the shaped spectrum so narrow peaks survive decimation
    json trace = json::array();
    const auto& mag = out.spectrum.magnitude;
    const std::size_t n = mag.size();
    const std::size_t points = std::max<std::size_t>(1, std::min(spectrum_points, n));
    for (std::size_t i = 0; i < points && n > 0; ++i) {
        const std::size_t lo = i * n / points;
        const std::size_t hi = std::max(lo + 1, (i + 1) * n / points);
        trace.push_back(round_sig(*std::max_element(mag.begin() + static_cast<std::ptrdiff_t>(lo),
                                                    mag.begin() + static_cast<std::ptrdiff_t>(hi))));
    }
    json spectrum{{"f_start", out.spectrum.freq_axis.empty() ? 0.0 : out.spectrum.freq_axis.front()},
                  {"f_end", out.spectrum.freq_axis.empty() ? 0.0 : out.spectrum.freq_axis.back()},
                  {"scale", "log"},
                  {"magnitude", trace}};
    return {{"type", "frame"},
            {"frame_index", out.frame_index},
            {"t_ms", out.t_ms},
            {"spectrum", spectrum},
            {"peaks", peaks},
            {"observations", observations},
            {"estimates", estimates},
            {"events", events},
            {"anomalies", anomalies}};
}

} // namespace rtag::harness
