#include "rtag/ringdown.hpp"

#include "rtag/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rtag::ringdown {

using tagphys::kPi;

namespace {
constexpr double kMinDwell = 5e-3;
constexpr double kMaxDwell = 10e-3;

void check_dwell(double dwell) {
    // small slack so that values typed in milliseconds convert cleanly
    if (!(dwell >= kMinDwell * (1 - 1e-12) && dwell <= kMaxDwell * (1 + 1e-12))) {
        throw DomainError("per-tag dwell must lie in [5 ms, 10 ms]");
    }
}
} // namespace

void LadderConfig::validate() const {
    if (n_bits < 4 || n_bits > 16) throw ConfigError("ladder must have 4 to 16 bits");
    if (!(c_min > 0.0 && c_lsb > 0.0 && l_reader > 0.0)) {
        throw ConfigError("ladder capacitances and reader inductance must be positive");
    }
    if (frequency(0) < 400e3 || frequency(max_code()) > 40e3) {
        throw ConfigError("ladder cannot reach the full 40-400 kHz span");
    }
}

double LadderConfig::frequency(std::uint32_t code) const noexcept {
    return 1.0 / (2.0 * kPi * std::sqrt(l_reader * capacitance(code)));
}

Tuning tune_code(double target_f, const LadderConfig& ladder) {
    ladder.validate();
    const double f_hi = ladder.frequency(0);
    const double f_lo = ladder.frequency(ladder.max_code());
    if (!(target_f >= f_lo && target_f <= f_hi)) {
        const double nearest = target_f > f_hi ? f_hi : f_lo;
        throw RangeError("target frequency outside the ladder range", nearest);
    }
    // Invert C(f) for a starting code, then settle between the two neighbours.
    const double w = 2.0 * kPi * target_f;
    const double c = 1.0 / (w * w * ladder.l_reader);
    const double ideal = std::clamp((c - ladder.c_min) / ladder.c_lsb, 0.0, double(ladder.max_code()));
    const auto lo = static_cast<std::uint32_t>(std::floor(ideal));
    Tuning best{lo, ladder.frequency(lo)};
    for (std::uint32_t code : {lo == 0 ? 0u : lo - 1u, lo + 1u, lo + 2u}) {
        if (code > ladder.max_code()) continue;
        const double f = ladder.frequency(code);
        if (std::abs(f - target_f) < std::abs(best.achieved_f - target_f)) best = {code, f};
    }
    return best;
}

double ring_time_constant(const tagphys::TagSpec& tag, double p) {
    return 2.0 * tag.q / (2.0 * kPi * tagphys::effective_f0(tag, p));
}

RingdownCapture excite_and_capture(std::span<const sweepchain::TagDrive> scene, double tag_f, double dwell,
                                   const LadderConfig& ladder, const CaptureConfig& cfg) {
    check_dwell(dwell);
    const Tuning tune = tune_code(tag_f, ladder);

    RingdownCapture cap;
    cap.excite_freq = tune.achieved_f;
    cap.sample_rate = cfg.oversample * tune.achieved_f;
    cap.t_off = cfg.pulse_len;
    const auto n = static_cast<std::size_t>(std::floor(dwell * cap.sample_rate));
    cap.samples.assign(n, 0.0);

    for (const auto& d : scene) {
        const double fe = tagphys::effective_f0(*d.tag, d.param);
        const double half_width = 0.5 * fe / d.tag->q;
        const double x = (tune.achieved_f - fe) / half_width;
        const double a0 = d.coupling * d.coupling / (1.0 + x * x);
        if (a0 == 0.0) continue;
        const double tau = ring_time_constant(*d.tag, d.param);
        const double w = 2.0 * kPi * fe;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = i / cap.sample_rate - cap.t_off;
            if (t < 0.0) continue;
            cap.samples[i] += a0 * std::exp(-t / tau) * std::sin(w * t);
        }
    }

    sweepchain::GaussianSource noise(sweepchain::mix_seed(cfg.seed, static_cast<std::uint64_t>(tag_f)));
    for (auto& s : cap.samples) s += cfg.noise_floor * noise.next();
    return cap;
}

double detect(const RingdownCapture& capture, double gate_start, double gate_len) {
    if (!(gate_start >= capture.t_off) || !(gate_len > 0.0) ||
        gate_start + gate_len > capture.duration() * (1 + 1e-12)) {
        throw DomainError("detection gate lies outside the ringdown capture");
    }
    const auto first = static_cast<std::size_t>(std::ceil(gate_start * capture.sample_rate));
    const auto last = std::min(capture.samples.size(),
                               static_cast<std::size_t>(std::floor((gate_start + gate_len) * capture.sample_rate)));
    if (last <= first) return 0.0;
    const double w = 2.0 * kPi * capture.excite_freq;
    double i_sum = 0.0;
    double q_sum = 0.0;
    for (std::size_t k = first; k < last; ++k) {
        const double t = k / capture.sample_rate;
        i_sum += capture.samples[k] * std::cos(w * t);
        q_sum += capture.samples[k] * std::sin(w * t);
    }
    return 2.0 * std::hypot(i_sum, q_sum) / static_cast<double>(last - first);
}

double schedule(std::size_t tag_count, double per_tag_dwell) {
    check_dwell(per_tag_dwell);
    return static_cast<double>(tag_count) * per_tag_dwell;
}

double schedule(std::span<const tagphys::TagSpec> tags, double per_tag_dwell) {
    return schedule(tags.size(), per_tag_dwell);
}

void write_capture_csv(const RingdownCapture& capture, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write ringdown dump " + path.string());
    os.precision(10);
    os << "t_s,amplitude\n";
    for (std::size_t i = 0; i < capture.samples.size(); ++i) {
        os << i / capture.sample_rate << ',' << capture.samples[i] << '\n';
    }
    if (!os) throw IoError("failed writing ringdown dump " + path.string());
}

} // namespace rtag::ringdown
