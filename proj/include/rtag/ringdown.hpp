// Pulse-induction ringdown reader: ladder-tuned transmit coil, ringdown
// capture, synchronous detection and sequential read timing.
#pragma once

#include "rtag/sweepchain.hpp"
#include "rtag/tagphys.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rtag::ringdown {

/// Binary-weighted capacitor ladder across the transmit coil.
struct LadderConfig {
    int n_bits = 8;
    double c_min = 150e-12;  ///< [F] with no ladder bits set
    double c_lsb = 64e-12;   ///< [F]
    double l_reader = 1e-3;  ///< [H]

    void validate() const;
    std::uint32_t max_code() const noexcept { return (1u << n_bits) - 1u; }
    double capacitance(std::uint32_t code) const noexcept { return c_min + code * c_lsb; }
    double frequency(std::uint32_t code) const noexcept;
};

struct Tuning {
    std::uint32_t code = 0;
    double achieved_f = 0.0;
};

/// Ladder code whose resonance is closest to `target_f`.
/// Throws RangeError (carrying the nearest reachable frequency) outside the ladder's span.
Tuning tune_code(double target_f, const LadderConfig& ladder);

struct RingdownCapture {
    double sample_rate = 0.0; ///< [Hz]
    std::vector<double> samples;
    double excite_freq = 0.0; ///< [Hz]
    double t_off = 0.0;       ///< [s] transmit-off instant

    double duration() const noexcept { return samples.size() / sample_rate; }
};

struct CaptureConfig {
    double pulse_len = 0.5e-3;  ///< transmit burst before t_off [s]
    double noise_floor = 1e-4;  ///< rms, fraction of full scale
    double oversample = 8.0;    ///< sample rate / excite frequency
    std::uint64_t seed = 1;
};

/// tau = 2 Q / w_eff
double ring_time_constant(const tagphys::TagSpec& tag, double p = 0.0);

/// Tune to `tag_f`, pulse, then record every tag's superposed ringdown for `dwell` seconds.
///
/// Each tag starts at c^2 times a Lorentzian in the detuning (FWHM f_eff/Q)
/// and rings at its own f_eff. Throws DomainError unless dwell is 5-10 ms.
RingdownCapture excite_and_capture(std::span<const sweepchain::TagDrive> scene, double tag_f, double dwell,
                                   const LadderConfig& ladder, const CaptureConfig& cfg = {});

/// Gated quadrature detection at the excitation frequency. Returns the mean
/// envelope over the gate (2/N |sum x e^{-jwt}|).
double detect(const RingdownCapture& capture, double gate_start, double gate_len);

/// Total time for sequential reads; per-tag dwell must be 5-10 ms.
double schedule(std::size_t tag_count, double per_tag_dwell);
double schedule(std::span<const tagphys::TagSpec> tags, double per_tag_dwell);

/// `t_s,amplitude` CSV. Throws IoError.
void write_capture_csv(const RingdownCapture& capture, const std::filesystem::path& path);

} // namespace rtag::ringdown
