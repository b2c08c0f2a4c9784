// Spectrum frames to identified tag observations: peak isolation, ID
// association through guard bands, drift calibration and presence tracking.
#pragma once

#include "rtag/sweepchain.hpp"
#include "rtag/tagphys.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rtag::tracker {

struct Peak {
    double center_freq = 0.0; ///< [Hz], sub-bin interpolated
    double amplitude = 0.0;   ///< interpolated height
    double width = 0.0;       ///< half-power width [Hz]
    bool merged_flag = false;
    std::size_t bin = 0;      ///< bin of the local maximum
    double prominence = 0.0;  ///< height above the higher flanking minimum
};

struct PeakOptions {
    /// A peak whose half-power half-width falls below this multiple of the
    /// half-width implied by its top curvature is a blend of unresolved resonances.
    double blend_ratio = 1.06;
    /// Maxima standing less than this fraction of their height above the
    /// surrounding valley are ripples on a tail, not resonances.
    double min_prominence = 0.2;
    /// Smallest relative dip that still counts as a second maximum inside min_sep.
    double merge_prominence = 0.02;
};

/// Interior local maxima above `threshold` at least `min_sep` bins apart; closer
/// maxima merge into the larger one. Centres come from a three-point parabola in
/// log magnitude.
std::vector<Peak> find_peaks(const sweepchain::SpectrumFrame& frame, double threshold, int min_sep,
                             const PeakOptions& opts = {});

struct RegistryEntry {
    std::string tag_id;
    std::size_t object_index = 0;
    std::size_t tag_index = 0; ///< within the object
    tagphys::TagSpec tag;
    double guard = 0.0; ///< [Hz]
    double band_lo = 0.0;
    double band_hi = 0.0;

    bool contains(double f) const noexcept { return f >= band_lo && f <= band_hi; }
};

/// Frequency table of every registered tag.
class TagRegistry {
public:
    TagRegistry() = default;

    /// Guard band per tag is max(3 bins, f0 / 2Q), extended downward by f0 alpha.
    /// Throws ConfigError when two bands overlap.
    static TagRegistry build(std::span<const tagphys::ObjectSpec> objects, const sweepchain::SweepConfig& sweep);

    std::optional<std::size_t> find(double freq) const;
    const std::vector<RegistryEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const RegistryEntry& operator[](std::size_t i) const { return entries_[i]; }

private:
    std::vector<RegistryEntry> entries_; // sorted by band_lo
};

struct CalibrationState {
    double freq_scale = 1.0;  ///< nominal / measured
    double freq_offset = 0.0; ///< [Hz]
    std::int64_t last_calibrated = -1;

    /// Reported bin frequency to true frequency.
    double correct(double reported) const noexcept { return reported / freq_scale - freq_offset; }
};

/// Sweep oscillator with an injected fractional frequency error.
struct Oscillator {
    double drift = 0.0;
    double nominal_hz = 100e3; ///< frequency commanded by the held control voltage

    double actual_hz() const noexcept { return nominal_hz * (1.0 + drift); }
};

/// Count oscillator cycles over `gate` seconds with the control voltage held.
/// Throws DomainError for gates under 10 ms, FaultError when no cycle is counted
/// or the correction leaves [0.9, 1.1].
CalibrationState calibrate(const Oscillator& osc, double gate, std::int64_t frame_index = 0);

struct TagObservation {
    std::string tag_id;
    std::size_t registry_index = 0;
    double freq = 0.0;      ///< calibrated [Hz]
    double amplitude = 0.0; ///< peak height over the tag's unit-coupling height (c^2 estimate)
    double raw_amplitude = 0.0;
    double width = 0.0;
    bool merged = false;
    std::int64_t frame_index = 0;
};

struct Anomaly {
    double freq = 0.0;
    double amplitude = 0.0;
    std::string reason;
};

struct Association {
    std::vector<TagObservation> observations;
    std::vector<Anomaly> anomalies;
};

Association associate(std::span<const Peak> peaks, const TagRegistry& registry, const CalibrationState& cal,
                      const tagphys::BridgeScale& bridge, std::int64_t frame_index = 0);

struct AssemblerConfig {
    double on_threshold = 0.02;
    double off_threshold = 0.01;
    double ema_alpha = 0.5;
    double frame_period = 1.0 / 30.0;

    void validate() const;
};

struct TagTrack {
    std::string tag_id;
    bool observed = false;  ///< a peak was associated this frame
    bool present = false;
    double freq = 0.0;      ///< most recent observed frequency
    double raw = 0.0;
    double amplitude = 0.0; ///< smoothed
    double slope = 0.0;     ///< d(amplitude)/dt [1/s]
};

struct TrackFrame {
    std::int64_t frame_index = 0;
    double timestamp = 0.0;
    std::vector<TagTrack> tracks; ///< one per registry entry, registry order
    std::vector<Anomaly> anomalies;
};

/// Smoothing and presence hysteresis over the observation stream.
///
/// A track that is absent restarts its average from the first new observation;
/// a present track averages zero on frames where it was not seen.
class Assembler {
public:
    Assembler(const TagRegistry& registry, AssemblerConfig cfg);

    TrackFrame update(std::int64_t frame_index, double timestamp, const Association& assoc);
    /// Takes over the state of tracks with matching tag ids, e.g. after the registry changed.
    void adopt(const Assembler& previous);
    const AssemblerConfig& config() const noexcept { return cfg_; }

private:
    AssemblerConfig cfg_;
    std::vector<TagTrack> tracks_;
};

} // namespace rtag::tracker
