// Musical mapping: per-frame object states to a deterministic MIDI-style event
// stream, plus JSON Lines and Standard MIDI File export.
#pragma once

#include "rtag/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rtag::trinkets {

/// Mapping input for one object in one frame.
struct ObjectState {
    std::size_t object_id = 0; ///< scene index
    ObjectRole role = ObjectRole::Goblin;
    bool present = false;
    double proximity = 0.0;   ///< [0, 1]
    double amplitude = 0.0;   ///< smoothed squared coupling (sum over the object's tags)
    double slope = 0.0;       ///< d(amplitude)/dt [1/s]
    Vec3 field_direction = Vec3::Zero(); ///< unsigned direction cosines, triad objects only
    double param = 0.0;       ///< mechanical parameter in [0, 1]
    std::array<double, 3> tag_amplitudes{};
};

enum class EventKind { NoteOn, NoteOff, ControlChange, PitchBend, ModeToggle };

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> kind_from_string(std::string_view name) noexcept;

struct MusicEvent {
    std::int64_t t_ms = 0;
    EventKind kind = EventKind::NoteOn;
    int channel = 0;
    int data1 = 0;
    int data2 = 0;

    /// Throws DomainError on out-of-range fields or a zero-velocity NoteOn.
    void validate() const;
    bool operator==(const MusicEvent&) const = default;
};

inline constexpr int kBendCenter = 8192;

MusicEvent pitch_bend(std::int64_t t_ms, int channel, int value);
/// 14-bit value of a PitchBend event.
int bend_value(const MusicEvent& ev) noexcept;

struct MappingConfig {
    std::vector<int> goblin_channels{0, 1, 2, 3, 4};
    std::vector<std::vector<int>> goblin_chords{
        {48, 55, 64}, {50, 57, 65}, {52, 59, 67}, {45, 52, 60}, {47, 54, 62}};
    int goblin_velocity = 80;
    int volume_cc = 7;

    int ring_channel = 5;
    double ring_on = 0.3;   ///< smoothed amplitude, rising
    double ring_off = 0.15; ///< smoothed amplitude, falling
    double ring_velocity_gain = 20.0; ///< velocity per unit slope [s]

    int pengachu_channel = 6;
    std::vector<int> pengachu_sequence{60, 62, 64, 67, 69, 67, 64, 62};
    int pengachu_step_frames = 4;
    int pengachu_transpose = 12; ///< semitones at proximity 1
    int pengachu_velocity = 90;

    int cube_channel = 7;
    int cube_note = 36;
    int cube_velocity = 90;
    double cube_bend_semitones = 2.0;

    int pez_choral_channel = 8;
    int pez_choral_note = 60;
    int pez_brass_channel = 9;
    int pez_brass_note = 72;
    int pez_velocity = 90;
    double pez_trigger = 0.8;
    double pez_rearm = 0.6;
    int pez_filter_cc = 74;

    double porcupine_semitones = 2.0;
    int pig_cc = 1;

    int eyeball_channel = 15;
    std::array<int, 3> eyeball_ccs{91, 92, 93};
    double eyeball_full_scale = 0.5; ///< tag amplitude mapped to 127

    int triangle_channel = 15;

    double bend_range_semitones = 2.0; ///< synthesizer bend range, full 14-bit swing
    int cc_slew = 8;                   ///< largest change of a proximity controller per frame

    /// Throws ConfigError naming the violated constraint.
    void validate() const;
    /// Channels that carry sound, in ascending order.
    std::vector<int> voice_channels() const;
};

/// Concatenation of the chords of the present goblins in goblin order.
/// `goblin_present[i]` refers to goblin slot i, which owns goblin channel i and chord i.
std::vector<int> note_pool(const std::vector<bool>& goblin_present, const MappingConfig& cfg);

/// Mutable state carried between frames.
struct MappingState {
    bool started = false;
    std::map<std::size_t, bool> present;    ///< by object id
    /// Goblin slot by object id: the lowest free slot at first appearance,
    /// released when the goblin is no longer listed.
    std::map<std::size_t, std::size_t> goblin_slot;
    std::map<std::size_t, int> ring_note;   ///< sounding ring notes
    std::map<std::size_t, bool> ring_armed; ///< fell below the off threshold since the last trigger
    std::map<std::size_t, int> step_count;  ///< pengachu frame counters
    std::map<std::size_t, int> pengachu_note;
    std::map<std::size_t, bool> pez_fired;
    std::map<std::pair<int, int>, int> cc;   ///< last sent value by (channel, controller)
    std::map<int, int> bend;                 ///< last sent bend by channel
    std::map<std::pair<int, int>, int> held; ///< sounding notes by (channel, note), count
    int mode = 0;
};

/// Applies every rule for one frame: goblins, triangles, other sources by id,
/// then modifiers; pitch bends are emitted last in channel order. Events are
/// emitted only when a value changes. Throws ConfigError when more goblins are
/// listed than there are goblin channels.
std::vector<MusicEvent> map_frame(std::span<const ObjectState> states, MappingState& state,
                                  const MappingConfig& cfg, std::int64_t t_ms);

/// NoteOff for every sounding note, in (channel, note) order.
std::vector<MusicEvent> flush(MappingState& state, std::int64_t t_ms);

/// `{"t_ms":..,"kind":"..","ch":..,"d1":..,"d2":..}` without a trailing newline.
std::string to_jsonl(const MusicEvent& ev);
/// Throws DomainError on malformed lines.
MusicEvent from_jsonl(std::string_view line);

void write_jsonl(std::span<const MusicEvent> log, const std::filesystem::path& path);
std::vector<MusicEvent> read_jsonl(const std::filesystem::path& path);

inline constexpr int kTicksPerQuarter = 480;
inline constexpr int kTempoUsPerQuarter = 500000;
/// Controller that carries ModeToggle in MIDI files.
inline constexpr int kModeToggleCc = 80;

/// Standard MIDI File, format 0, 480 ticks per quarter at 120 bpm.
std::vector<std::uint8_t> smf_bytes(std::span<const MusicEvent> log);
void write_smf(std::span<const MusicEvent> log, const std::filesystem::path& path);

} // namespace rtag::trinkets
