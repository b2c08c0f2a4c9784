#include "rtag/trinkets.hpp"

#include "rtag/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace rtag::trinkets {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::array<std::string_view, 5> kKindNames{"NoteOn", "NoteOff", "ControlChange", "PitchBend",
                                                     "ModeToggle"};

bool is_modifier(ObjectRole r) {
    return r == ObjectRole::Porcupine || r == ObjectRole::Pig || r == ObjectRole::Eyeball;
}

int clamp_midi(long v) { return static_cast<int>(std::clamp<long>(v, 0, 127)); }

int scale127(double x) { return clamp_midi(std::lround(127.0 * std::clamp(x, 0.0, 1.0))); }

// Signed angle of the dominant tag axis from the field, as a fraction of the
// largest possible angle (all three cosines equal).
double cube_bend_fraction(const Vec3& direction) {
    const Vec3 c = direction.cwiseAbs();
    const double norm = c.norm();
    if (!(norm > 0.0)) return 0.0;
    int dom = 0;
    c.maxCoeff(&dom);
    const int a = (dom + 1) % 3;
    const int b = (dom + 2) % 3;
    static const double kMaxAngle = std::acos(1.0 / std::sqrt(3.0));
    const double angle = std::acos(std::min(1.0, c[dom] / norm));
    const double sign = c[a] >= c[b] ? 1.0 : -1.0;
    return sign * std::min(1.0, angle / kMaxAngle);
}

class Emitter {
public:
    Emitter(MappingState& st, std::int64_t t) : st_(st), t_(t) {}

    void note_on(int ch, int note, int velocity) {
        out.push_back({t_, EventKind::NoteOn, ch, note, std::clamp(velocity, 1, 127)});
        ++st_.held[{ch, note}];
    }

    void note_off(int ch, int note) {
        auto it = st_.held.find({ch, note});
        if (it == st_.held.end()) return;
        out.push_back({t_, EventKind::NoteOff, ch, note, 0});
        if (--it->second == 0) st_.held.erase(it);
    }

    // Moves the controller toward `target`, at most `slew` per frame when slew > 0.
    void control(int ch, int cc, int target, int slew) {
        const auto key = std::make_pair(ch, cc);
        auto it = st_.cc.find(key);
        const bool sent = it != st_.cc.end();
        const int last = sent ? it->second : 0;
        int value = target;
        if (slew > 0) value = last + std::clamp(target - last, -slew, slew);
        if (sent && value == last) return;
        st_.cc[key] = value;
        out.push_back({t_, EventKind::ControlChange, ch, cc, value});
    }

    bool has_control(int ch, int cc) const { return st_.cc.count({ch, cc}) > 0; }

    void bend(int ch, int value) {
        auto it = st_.bend.find(ch);
        if (it != st_.bend.end() && it->second == value) return;
        st_.bend[ch] = value;
        out.push_back(pitch_bend(t_, ch, value));
    }

    std::vector<MusicEvent> out;

private:
    MappingState& st_;
    std::int64_t t_;
};

void check_channel(int ch, const char* what) {
    if (ch < 0 || ch > 15) throw ConfigError(std::string(what) + " channel must be 0-15");
}

void check_note(int note, const char* what) {
    if (note < 0 || note > 127) throw ConfigError(std::string(what) + " note must be 0-127");
}

void check_data(int v, const char* what) {
    if (v < 0 || v > 127) throw ConfigError(std::string(what) + " must be 0-127");
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t buf[5];
    int n = 0;
    buf[n++] = static_cast<std::uint8_t>(v & 0x7F);
    while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7F));
    while (n > 0) out.push_back(buf[--n]);
}

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int bytes) {
    for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

} // namespace

std::string_view to_string(EventKind kind) noexcept { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<EventKind> kind_from_string(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kKindNames.size(); ++i)
        if (kKindNames[i] == name) return static_cast<EventKind>(i);
    return std::nullopt;
}

void MusicEvent::validate() const {
    if (t_ms < 0) throw DomainError("event timestamp is negative");
    if (channel < 0 || channel > 15) throw DomainError("event channel outside 0-15");
    if (data1 < 0 || data1 > 127 || data2 < 0 || data2 > 127) throw DomainError("event data outside 0-127");
    if (kind == EventKind::NoteOn && data2 == 0) throw DomainError("NoteOn with velocity 0");
}

MusicEvent pitch_bend(std::int64_t t_ms, int channel, int value) {
    value = std::clamp(value, 0, 16383);
    return {t_ms, EventKind::PitchBend, channel, value & 0x7F, (value >> 7) & 0x7F};
}

int bend_value(const MusicEvent& ev) noexcept { return ev.data1 | (ev.data2 << 7); }

void MappingConfig::validate() const {
    if (goblin_chords.size() < goblin_channels.size())
        throw ConfigError("every goblin channel needs a chord table");
    for (int ch : goblin_channels) check_channel(ch, "goblin");
    for (const auto& chord : goblin_chords) {
        if (chord.empty()) throw ConfigError("goblin chord table is empty");
        for (int n : chord) check_note(n, "goblin chord");
    }
    check_channel(ring_channel, "ring");
    check_channel(pengachu_channel, "pengachu");
    check_channel(cube_channel, "cube");
    check_channel(pez_choral_channel, "pez choral");
    check_channel(pez_brass_channel, "pez brass");
    check_channel(eyeball_channel, "eyeball");
    check_channel(triangle_channel, "triangle");
    auto voices = goblin_channels;
    voices.insert(voices.end(), {ring_channel, pengachu_channel, cube_channel, pez_choral_channel, pez_brass_channel});
    if (std::set<int>(voices.begin(), voices.end()).size() != voices.size())
        throw ConfigError("sounding roles must use distinct channels");
    if (pengachu_sequence.empty()) throw ConfigError("pengachu sequence is empty");
    for (int n : pengachu_sequence) {
        check_note(n, "pengachu");
        check_note(n + pengachu_transpose, "transposed pengachu");
    }
    if (pengachu_step_frames < 1) throw ConfigError("pengachu step must be at least one frame");
    if (pengachu_transpose < 0) throw ConfigError("pengachu transposition must be non-negative");
    check_note(cube_note, "cube");
    check_note(pez_choral_note, "pez choral");
    check_note(pez_brass_note, "pez brass");
    for (int v : {goblin_velocity, pengachu_velocity, cube_velocity, pez_velocity})
        if (v < 1 || v > 127) throw ConfigError("velocity must be 1-127");
    for (int cc : {volume_cc, pez_filter_cc, pig_cc, eyeball_ccs[0], eyeball_ccs[1], eyeball_ccs[2]})
        check_data(cc, "controller number");
    if (!(ring_off > 0.0 && ring_off < ring_on)) throw ConfigError("ring thresholds need 0 < off < on");
    if (!(ring_velocity_gain > 0.0)) throw ConfigError("ring velocity gain must be positive");
    if (!(pez_rearm < pez_trigger && pez_trigger <= 1.0 && pez_rearm >= 0.0))
        throw ConfigError("pez thresholds need 0 <= rearm < trigger <= 1");
    if (!(bend_range_semitones > 0.0)) throw ConfigError("bend range must be positive");
    if (cube_bend_semitones < 0.0 || porcupine_semitones < 0.0) throw ConfigError("bend depths must be non-negative");
    if (!(eyeball_full_scale > 0.0)) throw ConfigError("eyeball full scale must be positive");
    if (cc_slew < 1) throw ConfigError("controller slew must be at least 1 per frame");
}

std::vector<int> MappingConfig::voice_channels() const {
    std::set<int> s(goblin_channels.begin(), goblin_channels.end());
    s.insert({ring_channel, pengachu_channel, cube_channel, pez_choral_channel, pez_brass_channel});
    return {s.begin(), s.end()};
}

std::vector<int> note_pool(const std::vector<bool>& goblin_present, const MappingConfig& cfg) {
    std::vector<int> pool;
    for (std::size_t i = 0; i < goblin_present.size() && i < cfg.goblin_chords.size(); ++i)
        if (goblin_present[i]) pool.insert(pool.end(), cfg.goblin_chords[i].begin(), cfg.goblin_chords[i].end());
    return pool;
}

std::vector<MusicEvent> map_frame(std::span<const ObjectState> states, MappingState& state,
                                  const MappingConfig& cfg, std::int64_t t_ms) {
    std::vector<const ObjectState*> order;
    order.reserve(states.size());
    for (const auto& s : states) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(),
                     [](const ObjectState* a, const ObjectState* b) { return a->object_id < b->object_id; });

    std::vector<const ObjectState*> goblins;
    for (const auto* s : order)
        if (s->role == ObjectRole::Goblin) goblins.push_back(s);
    // a goblin keeps its slot (channel and chord) while it is listed
    for (auto it = state.goblin_slot.begin(); it != state.goblin_slot.end();) {
        const bool listed = std::any_of(goblins.begin(), goblins.end(),
                                        [&](const ObjectState* g) { return g->object_id == it->first; });
        it = listed ? std::next(it) : state.goblin_slot.erase(it);
    }
    for (const auto* g : goblins) {
        if (state.goblin_slot.count(g->object_id)) continue;
        std::size_t slot = 0;
        while (slot < cfg.goblin_channels.size() &&
               std::any_of(state.goblin_slot.begin(), state.goblin_slot.end(),
                           [&](const auto& kv) { return kv.second == slot; }))
            ++slot;
        if (slot == cfg.goblin_channels.size()) throw ConfigError("scene has more goblins than goblin channels");
        state.goblin_slot[g->object_id] = slot;
    }

    Emitter em(state, t_ms);
    const auto voices = cfg.voice_channels();
    if (!state.started) cfg.validate();
    // bends are centred once, on the first frame that lists any object
    if (!state.started && !states.empty()) {
        for (int ch : voices) em.bend(ch, kBendCenter);
        state.started = true;
    }
    auto was_present = [&](std::size_t id) {
        auto it = state.present.find(id);
        return it != state.present.end() && it->second;
    };

    std::vector<bool> goblin_present(cfg.goblin_channels.size(), false);
    for (const auto* gp : goblins) {
        const auto& g = *gp;
        const std::size_t slot = state.goblin_slot.at(g.object_id);
        const int ch = cfg.goblin_channels[slot];
        const auto& chord = cfg.goblin_chords[slot];
        const bool was = was_present(g.object_id);
        if (g.present) {
            em.control(ch, cfg.volume_cc, scale127(g.proximity), cfg.cc_slew);
            if (!was)
                for (int n : chord) em.note_on(ch, n, cfg.goblin_velocity);
        } else if (was) {
            for (int n : chord) em.note_off(ch, n);
        }
        goblin_present[slot] = g.present;
    }
    const auto pool = note_pool(goblin_present, cfg);

    for (const auto* s : order) {
        if (s->role != ObjectRole::Triangle) continue;
        if (s->present && !was_present(s->object_id)) {
            state.mode ^= 1;
            em.out.push_back({t_ms, EventKind::ModeToggle, cfg.triangle_channel, state.mode, 0});
        }
    }

    double cube_semis = 0.0;
    for (const auto* s : order) {
        const auto id = s->object_id;
        const bool was = was_present(id);
        switch (s->role) {
        case ObjectRole::Ring: {
            auto sounding = state.ring_note.find(id);
            bool& armed = state.ring_armed.try_emplace(id, true).first->second;
            if (sounding == state.ring_note.end()) {
                if (armed && s->amplitude >= cfg.ring_on) {
                    armed = false;
                    if (!pool.empty()) {
                        const int note = pool[id % pool.size()];
                        const long vel = std::lround(cfg.ring_velocity_gain * std::max(0.0, s->slope));
                        em.note_on(cfg.ring_channel, note, static_cast<int>(std::clamp<long>(vel, 1, 127)));
                        state.ring_note[id] = note;
                    }
                } else if (s->amplitude < cfg.ring_off) {
                    armed = true;
                }
            } else if (s->amplitude < cfg.ring_off) {
                em.note_off(cfg.ring_channel, sounding->second);
                state.ring_note.erase(sounding);
                armed = true;
            }
            break;
        }
        case ObjectRole::Pengachu: {
            auto sounding = state.pengachu_note.find(id);
            if (s->present) {
                int& count = state.step_count[id];
                if (!was) count = 0;
                if (count % cfg.pengachu_step_frames == 0) {
                    const auto step = static_cast<std::size_t>(count / cfg.pengachu_step_frames);
                    const int base = cfg.pengachu_sequence[step % cfg.pengachu_sequence.size()];
                    const int note = clamp_midi(base + std::lround(std::clamp(s->proximity, 0.0, 1.0) *
                                                                   cfg.pengachu_transpose));
                    if (sounding != state.pengachu_note.end()) em.note_off(cfg.pengachu_channel, sounding->second);
                    em.note_on(cfg.pengachu_channel, note, cfg.pengachu_velocity);
                    state.pengachu_note[id] = note;
                }
                count = (count + 1) % (cfg.pengachu_step_frames * static_cast<int>(cfg.pengachu_sequence.size()));
            } else if (sounding != state.pengachu_note.end()) {
                em.note_off(cfg.pengachu_channel, sounding->second);
                state.pengachu_note.erase(sounding);
            }
            break;
        }
        case ObjectRole::Cube:
            if (s->present) {
                if (!was) em.note_on(cfg.cube_channel, cfg.cube_note, cfg.cube_velocity);
                cube_semis = cfg.cube_bend_semitones * cube_bend_fraction(s->field_direction);
            } else if (was) {
                em.note_off(cfg.cube_channel, cfg.cube_note);
            }
            break;
        case ObjectRole::Pez: {
            bool& fired = state.pez_fired[id];
            if (s->present) {
                if (!was) em.note_on(cfg.pez_choral_channel, cfg.pez_choral_note, cfg.pez_velocity);
                em.control(cfg.pez_choral_channel, cfg.pez_filter_cc, scale127(s->param), 0);
                if (!fired && s->param > cfg.pez_trigger) {
                    em.note_on(cfg.pez_brass_channel, cfg.pez_brass_note, cfg.pez_velocity);
                    fired = true;
                } else if (fired && s->param < cfg.pez_rearm) {
                    em.note_off(cfg.pez_brass_channel, cfg.pez_brass_note);
                    fired = false;
                }
            } else if (was) {
                em.note_off(cfg.pez_choral_channel, cfg.pez_choral_note);
                if (fired) em.note_off(cfg.pez_brass_channel, cfg.pez_brass_note);
                fired = false;
            }
            break;
        }
        default:
            break;
        }
    }

    double porcupine_semis = 0.0;
    int pig_target = 0;
    bool pig_seen = false;
    for (const auto* s : order) {
        if (s->role == ObjectRole::Porcupine && s->present)
            porcupine_semis += cfg.porcupine_semitones * std::clamp(s->proximity, 0.0, 1.0);
        if (s->role == ObjectRole::Pig && s->present) {
            pig_target = std::max(pig_target, scale127(s->proximity));
            pig_seen = true;
        }
    }
    for (const auto* s : order) {
        if (!is_modifier(s->role)) continue;
        if (s->role == ObjectRole::Pig) {
            for (int ch : voices)
                if (pig_seen || em.has_control(ch, cfg.pig_cc)) em.control(ch, cfg.pig_cc, pig_target, cfg.cc_slew);
        } else if (s->role == ObjectRole::Eyeball) {
            for (std::size_t i = 0; i < 3; ++i) {
                const int cc = cfg.eyeball_ccs[i];
                const int target = s->present ? scale127(s->tag_amplitudes[i] / cfg.eyeball_full_scale) : 0;
                if (s->present || em.has_control(cfg.eyeball_channel, cc))
                    em.control(cfg.eyeball_channel, cc, target, cfg.cc_slew);
            }
        }
    }

    for (int ch : state.started ? voices : std::vector<int>{}) {
        const double semis = (ch == cfg.cube_channel ? cube_semis : 0.0) - porcupine_semis;
        const double swing = semis >= 0.0 ? 8191.0 : 8192.0;
        const long value = kBendCenter + std::lround(swing * semis / cfg.bend_range_semitones);
        em.bend(ch, static_cast<int>(std::clamp<long>(value, 0, 16383)));
    }

    for (const auto* s : order) state.present[s->object_id] = s->present;
    return std::move(em.out);
}

std::vector<MusicEvent> flush(MappingState& state, std::int64_t t_ms) {
    std::vector<MusicEvent> out;
    for (const auto& [key, count] : state.held)
        for (int i = 0; i < count; ++i) out.push_back({t_ms, EventKind::NoteOff, key.first, key.second, 0});
    state.held.clear();
    state.ring_note.clear();
    state.pengachu_note.clear();
    for (auto& [id, fired] : state.pez_fired) fired = false;
    for (auto& [id, present] : state.present) present = false;
    return out;
}

std::string to_jsonl(const MusicEvent& ev) {
    ordered_json j;
    j["t_ms"] = ev.t_ms;
    j["kind"] = to_string(ev.kind);
    j["ch"] = ev.channel;
    j["d1"] = ev.data1;
    j["d2"] = ev.data2;
    return j.dump();
}

MusicEvent from_jsonl(std::string_view line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const ordered_json::parse_error& e) {
        throw DomainError(std::string("event line does not parse: ") + e.what());
    }
    auto integer = [&](const char* key) -> std::int64_t {
        if (!j.is_object() || !j.contains(key) || !j[key].is_number_integer())
            throw DomainError(std::string("event field '") + key + "' missing or not an integer");
        return j[key].get<std::int64_t>();
    };
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw DomainError("event field 'kind' missing or not a string");
    const auto kind = kind_from_string(j["kind"].get<std::string>());
    if (!kind) throw DomainError("unknown event kind '" + j["kind"].get<std::string>() + "'");
    auto small = [&](const char* key) {
        const auto v = integer(key);
        if (v < 0 || v > 127) throw DomainError(std::string("event field '") + key + "' outside 0-127");
        return static_cast<int>(v);
    };
    MusicEvent ev{integer("t_ms"), *kind, small("ch"), small("d1"), small("d2")};
    ev.validate();
    return ev;
}

void write_jsonl(std::span<const MusicEvent> log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& ev : log) out << to_jsonl(ev) << '\n';
    if (!out) throw IoError("write to " + path.string() + " failed");
}

std::vector<MusicEvent> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<MusicEvent> log;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            log.push_back(from_jsonl(line));
        } catch (const DomainError& e) {
            throw DomainError(path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    return log;
}

std::vector<std::uint8_t> smf_bytes(std::span<const MusicEvent> log) {
    std::vector<std::uint8_t> track;
    put_vlq(track, 0);
    track.insert(track.end(), {0xFF, 0x51, 0x03});
    put_be(track, kTempoUsPerQuarter, 3);

    // ticks per millisecond = tpq / (tempo in ms)
    const double ticks_per_ms = kTicksPerQuarter * 1000.0 / kTempoUsPerQuarter;
    std::int64_t last_tick = 0;
    std::int64_t last_ms = 0;
    for (const auto& ev : log) {
        ev.validate();
        if (ev.t_ms < last_ms) throw DomainError("event log is not in time order");
        last_ms = ev.t_ms;
        const auto tick = std::llround(static_cast<double>(ev.t_ms) * ticks_per_ms);
        put_vlq(track, static_cast<std::uint32_t>(tick - last_tick));
        last_tick = tick;
        const auto ch = static_cast<std::uint8_t>(ev.channel);
        const auto d1 = static_cast<std::uint8_t>(ev.data1);
        const auto d2 = static_cast<std::uint8_t>(ev.data2);
        switch (ev.kind) {
        case EventKind::NoteOn: track.insert(track.end(), {static_cast<std::uint8_t>(0x90 | ch), d1, d2}); break;
        case EventKind::NoteOff: track.insert(track.end(), {static_cast<std::uint8_t>(0x80 | ch), d1, d2}); break;
        case EventKind::ControlChange:
            track.insert(track.end(), {static_cast<std::uint8_t>(0xB0 | ch), d1, d2});
            break;
        case EventKind::PitchBend: track.insert(track.end(), {static_cast<std::uint8_t>(0xE0 | ch), d1, d2}); break;
        case EventKind::ModeToggle:
            track.insert(track.end(), {static_cast<std::uint8_t>(0xB0 | ch), static_cast<std::uint8_t>(kModeToggleCc),
                                       static_cast<std::uint8_t>(ev.data1 ? 127 : 0)});
            break;
        }
    }
    put_vlq(track, 0);
    track.insert(track.end(), {0xFF, 0x2F, 0x00});

    std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
    put_be(out, 6, 4);
    put_be(out, 0, 2);
    put_be(out, 1, 2);
    put_be(out, kTicksPerQuarter, 2);
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_be(out, static_cast<std::uint32_t>(track.size()), 4);
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

void write_smf(std::span<const MusicEvent> log, const std::filesystem::path& path) {
    const auto bytes = smf_bytes(log);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to " + path.string() + " failed");
}

} // namespace rtag::trinkets
