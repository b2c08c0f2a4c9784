// End-to-end frame pipeline: trajectories, bridge synthesis, shaping, peak
// tracking, estimation and musical mapping, with frame-boundary mutations.
#pragma once

#include "rtag/posest.hpp"
#include "rtag/scene.hpp"
#include "rtag/sweepchain.hpp"
#include "rtag/tracker.hpp"
#include "rtag/trinkets.hpp"
#include "rtag/wire.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rtag::harness {

inline constexpr std::array<const char*, 6> kStageNames{"synthesis", "shape", "peaks", "track", "posest", "mapping"};

/// A stage failed; carries the stage name and frame index.
class StageError : public Error {
public:
    StageError(std::string stage, std::int64_t frame_index, const std::string& what)
        : Error("stage '" + stage + "' failed at frame " + std::to_string(frame_index) + ": " + what),
          stage_(std::move(stage)), frame_index_(frame_index) {}
    const std::string& stage() const noexcept { return stage_; }
    std::int64_t frame_index() const noexcept { return frame_index_; }

private:
    std::string stage_;
    std::int64_t frame_index_;
};

/// Rejected client mutation.
class MutationError : public Error {
public:
    using Error::Error;
};

struct ObjectEstimate {
    std::string name;
    ObjectRole role = ObjectRole::Goblin;
    std::size_t uid = 0;
    bool present = false;
    double proximity = 0.0;
    double amplitude = 0.0; ///< sum of the smoothed tag amplitudes
    double slope = 0.0;
    Vec3 field_direction = Vec3::Zero();
    std::optional<double> param;
    std::vector<double> tag_amplitudes;
};

struct FrameOutput {
    std::int64_t frame_index = 0;
    double timestamp = 0.0;
    std::int64_t t_ms = 0;
    sweepchain::SpectrumFrame spectrum; ///< shaped
    std::vector<tracker::Peak> peaks;
    tracker::TrackFrame tracks;
    std::vector<ObjectEstimate> estimates;
    std::vector<trinkets::MusicEvent> events;
    std::array<double, kStageNames.size()> stage_ms{};
};

/// Single ordered frame stream over a mutable scene.
class Pipeline {
public:
    /// `seed` replaces the scene's noise seed.
    Pipeline(Scene scene, std::uint64_t seed);
    ~Pipeline();
    Pipeline(Pipeline&&) noexcept;
    Pipeline& operator=(Pipeline&&) noexcept;

    /// Produces the next frame. Throws StageError.
    FrameOutput step();

    /// Applies a mutation before the next frame and returns the acknowledgement
    /// `{"op", "frame_index", ...}`. Throws MutationError without changing state
    /// when the mutation is malformed or inconsistent with the scene.
    nlohmann::json apply(const nlohmann::json& mutation);

    /// NoteOff for every sounding note, stamped at the next frame time.
    std::vector<trinkets::MusicEvent> finish();

    std::int64_t next_frame() const noexcept { return next_frame_; }
    const Scene& scene() const noexcept { return scene_; }
    const tracker::CalibrationState& calibration() const noexcept { return calibration_; }
    const tracker::TagRegistry& registry() const noexcept { return registry_; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    void rebuild_registry();
    std::int64_t t_ms(std::int64_t frame) const;

    struct Physics;
    Scene scene_;
    std::uint64_t seed_;
    std::unique_ptr<Physics> physics_;
    tracker::TagRegistry registry_;
    std::map<std::string, std::size_t> registry_index_;
    std::unique_ptr<tracker::Assembler> assembler_;
    tracker::CalibrationState calibration_;
    trinkets::MappingState mapping_;
    std::vector<std::size_t> uids_;
    std::size_t next_uid_ = 0;
    std::vector<trinkets::ObjectState> departed_; ///< removed objects, silenced on the next frame
    std::vector<trinkets::MusicEvent> pending_;   ///< emitted at the start of the next frame
    std::vector<std::optional<double>> param_memory_;
    std::int64_t next_frame_ = 0;
};

/// One recorded mutation: applied before frame `frame_index`.
struct MutationRecord {
    std::int64_t frame_index = 0;
    nlohmann::json mutation;
};

std::vector<MutationRecord> read_mutation_log(const std::filesystem::path& path);
std::string mutation_log_line(const MutationRecord& rec);

struct RunOptions {
    double duration = 10.0; ///< [s]
    std::uint64_t seed = 1;
    std::filesystem::path out_dir;
    bool dump_spectra = false;
    bool dump_ringdown = false;
    std::optional<std::filesystem::path> wire_capture;
    std::vector<MutationRecord> mutations;
};

struct StageTiming {
    double p50 = 0.0;
    double p95 = 0.0;
    double p99 = 0.0;
    double max = 0.0;
};

struct RunReport {
    std::int64_t frames = 0;
    std::size_t events = 0;
    std::size_t anomalies = 0;
    std::map<std::string, StageTiming> timing_ms; ///< per stage plus "total"
    std::vector<trinkets::MusicEvent> log;
    nlohmann::json to_json() const;
};

/// Frame count for a duration: floor(duration / frame_period), tolerant of rounding.
std::int64_t frame_count(double duration, double frame_period);

StageTiming percentiles(std::vector<double> samples);

/// Runs `duration` seconds of frames, writing `events.jsonl` and `report.json`
/// (plus optional spectra, ringdown captures and wire capture) under out_dir
/// when it is non-empty.
RunReport run(const Scene& scene, const RunOptions& opts);

/// Per-frame service message.
nlohmann::json frame_message(const FrameOutput& out, std::size_t spectrum_points = 512);

} // namespace rtag::harness
