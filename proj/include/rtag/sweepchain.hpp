// Swept-frequency reader: exponential chirp, inductive-bridge synthesis over a
// scene of tags, and the highpass shaping stage.
#pragma once

#include "rtag/tagphys.hpp"
#include "rtag/types.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rtag::sweepchain {

struct SweepConfig {
    double f_start = 40e3;
    double f_end = 400e3;
    double frame_period = 1.0 / 30.0;
    int bins = 2048;
    double noise_rms = 0.0; ///< rms of the complex bridge noise, full scale 1.0
    std::uint64_t seed = 1;
    /// Fractional error of the sweep oscillator (true = nominal * (1 + drift)).
    double osc_drift = 0.0;

    void validate() const;
};

/// f(t) = f_start (f_end / f_start)^(t / frame_period). Throws DomainError outside the frame.
double chirp_freq(double t, const SweepConfig& cfg);

/// Nominal frequency of every bin, i.e. the chirp sampled at `bins` evenly spaced instants.
std::vector<double> bin_frequencies(const SweepConfig& cfg);

struct SpectrumFrame {
    std::int64_t frame_index = 0;
    std::vector<double> freq_axis; ///< [Hz], exponentially spaced
    std::vector<double> magnitude;
    double timestamp = 0.0; ///< [s]

    std::size_t size() const noexcept { return magnitude.size(); }
};

/// An object placed in the reader's field for one frame.
struct PlacedObject {
    const tagphys::ObjectSpec* spec = nullptr;
    Pose pose;
    double param = 0.0;
};

struct Synthesis {
    SpectrumFrame frame;
    std::vector<std::string> warnings;
};

/// Per-tag state seen by the bridge in one frame.
struct TagDrive {
    const tagphys::TagSpec* tag = nullptr;
    double coupling = 0.0;
    double param = 0.0;
};

/// Couplings of every tag in the scene (tags share their object's position).
std::vector<TagDrive> tag_drives(std::span<const PlacedObject> scene, const tagphys::CouplingModel& field);

/// Bridge magnitude per bin: |sum Z_r| / z_norm, plus complex white noise when configured.
///
/// Noise is seeded from (cfg.seed, frame_index) so a frame is reproducible on its own.
Synthesis bridge_response(std::span<const PlacedObject> scene, const tagphys::CouplingModel& field,
                          const tagphys::BridgeScale& bridge, const SweepConfig& cfg,
                          std::int64_t frame_index);

/// Same as above with couplings already evaluated.
Synthesis bridge_response(std::span<const TagDrive> drives, const tagphys::BridgeScale& bridge,
                          const SweepConfig& cfg, std::int64_t frame_index);

/// Highpass emulation: subtract a sliding median baseline and clamp at zero.
///
/// The median skips a guard region of window/4 bins either side of the centre
/// so that a narrow peak does not lift its own baseline.
SpectrumFrame shape(const SpectrumFrame& frame, int baseline_window);

/// Writes `bin,freq_hz,magnitude` CSV. Throws IoError.
void write_spectrum_csv(const SpectrumFrame& frame, const std::filesystem::path& path);

/// Deterministic standard normal source (Box-Muller over mt19937_64), identical on every platform.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed);
    double next();

private:
    double uniform();
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Seed mixing for per-frame streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace rtag::sweepchain
