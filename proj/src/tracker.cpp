#include "rtag/tracker.hpp"

#include "rtag/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rtag::tracker {

namespace {

constexpr double kTiny = 1e-300;
constexpr double kHalfPower = 0.70710678118654752440;
// widest half-power width, in units of f / Q, still accepted as a tag resonance
constexpr double kMaxWidthRatio = 4.0;

double log_mag(double m) { return std::log(std::max(m, kTiny)); }

// Frequency at fractional bin position x on an exponential axis.
double axis_at(const std::vector<double>& axis, double x) {
    const auto n = axis.size();
    if (x <= 0.0) return axis.front();
    if (x >= static_cast<double>(n - 1)) return axis.back();
    const auto k = static_cast<std::size_t>(std::floor(x));
    const double frac = x - static_cast<double>(k);
    if (frac == 0.0) return axis[k];
    return axis[k] * std::pow(axis[k + 1] / axis[k], frac);
}

// Fractional bin where the magnitude first drops below `level`, walking from `k` by `dir`.
double crossing(const std::vector<double>& m, std::size_t k, int dir, double level) {
    std::size_t i = k;
    while (true) {
        const long next = static_cast<long>(i) + dir;
        if (next < 0 || next >= static_cast<long>(m.size())) return static_cast<double>(i);
        const auto j = static_cast<std::size_t>(next);
        if (m[j] < level) {
            const double t = (m[i] - level) / (m[i] - m[j]);
            return static_cast<double>(i) + dir * t;
        }
        if (m[j] > m[i]) return static_cast<double>(i); // climbing into another peak
        i = j;
    }
}

// Lowest value between `k` and the first higher sample in direction `dir` (or the frame edge).
double key_col(const std::vector<double>& m, std::size_t k, int dir) {
    double low = m[k];
    for (long i = static_cast<long>(k) + dir; i >= 0 && i < static_cast<long>(m.size()); i += dir) {
        const double v = m[static_cast<std::size_t>(i)];
        if (v > m[k]) break;
        low = std::min(low, v);
    }
    return low;
}

} // namespace

std::vector<Peak> find_peaks(const sweepchain::SpectrumFrame& frame, double threshold, int min_sep,
                             const PeakOptions& opts) {
    if (!(threshold > 0.0)) throw DomainError("peak threshold must be positive");
    if (min_sep < 1) throw DomainError("peak separation must be at least one bin");
    if (frame.freq_axis.size() != frame.magnitude.size()) throw DomainError("frame axis and magnitude differ in size");
    const auto& m = frame.magnitude;
    const std::size_t n = m.size();
    if (n < 3) return {};

    struct Maximum {
        std::size_t bin;
        double prominence;
    };
    std::vector<Maximum> maxima;
    // the sweep ends are never maxima: a rising tail there has no top to measure
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (!(m[k] > threshold && m[k] > m[k - 1] && m[k] >= m[k + 1])) continue;
        const double prominence = m[k] - std::max(key_col(m, k, -1), key_col(m, k, +1));
        if (prominence >= opts.merge_prominence * m[k]) maxima.push_back({k, prominence});
    }
    std::stable_sort(maxima.begin(), maxima.end(),
                     [&](const Maximum& a, const Maximum& b) { return m[a.bin] > m[b.bin]; });

    struct Accepted {
        std::size_t bin;
        bool merged;
    };
    std::vector<Accepted> accepted;
    for (const auto& mx : maxima) {
        const std::size_t k = mx.bin;
        auto near = std::find_if(accepted.begin(), accepted.end(), [&](const Accepted& a) {
            const auto d = k > a.bin ? k - a.bin : a.bin - k;
            return d < static_cast<std::size_t>(min_sep);
        });
        if (near != accepted.end()) {
            near->merged = true;
        } else if (mx.prominence >= opts.min_prominence * m[k]) {
            accepted.push_back({k, false});
        }
    }
    std::sort(accepted.begin(), accepted.end(), [](const Accepted& a, const Accepted& b) { return a.bin < b.bin; });

    std::vector<Peak> peaks;
    peaks.reserve(accepted.size());
    for (const auto& a : accepted) {
        const std::size_t k = a.bin;
        Peak p;
        p.bin = k;
        p.merged_flag = a.merged;

        double delta = 0.0;
        const double c = log_mag(m[k]);
        const double l = log_mag(m[k - 1]);
        const double r = log_mag(m[k + 1]);
        double curvature = l - 2.0 * c + r;
        if (!std::isfinite(curvature)) curvature = 0.0;
        if (curvature < 0.0) delta = std::clamp(0.5 * (l - r) / curvature, -0.5, 0.5);
        const double pos = static_cast<double>(k) + delta;
        p.center_freq = axis_at(frame.freq_axis, pos);
        p.amplitude = curvature < 0.0 ? std::exp(c - 0.5 * curvature * delta * delta) : m[k];

        const double level = p.amplitude * kHalfPower;
        const double lo = crossing(m, k, -1, level);
        const double hi = crossing(m, k, +1, level);
        p.width = std::max(axis_at(frame.freq_axis, hi) - axis_at(frame.freq_axis, lo),
                           std::numeric_limits<double>::min());

        // A lone resonance has a half-power half-width about 1.2 times the
        // width its top curvature implies; unresolved blends flatten the top.
        if (curvature < 0.0 && hi > lo) {
            const double implied = std::sqrt(std::log(2.0) / -curvature);
            if (0.5 * (hi - lo) / implied < opts.blend_ratio) p.merged_flag = true;
        }

        p.prominence = m[k] - std::max(key_col(m, k, -1), key_col(m, k, +1));
        peaks.push_back(p);
    }
    return peaks;
}

TagRegistry TagRegistry::build(std::span<const tagphys::ObjectSpec> objects, const sweepchain::SweepConfig& sweep) {
    sweep.validate();
    const double bin_ratio = std::pow(sweep.f_end / sweep.f_start, 1.0 / (sweep.bins - 1));
    TagRegistry reg;
    for (std::size_t oi = 0; oi < objects.size(); ++oi) {
        const auto& obj = objects[oi];
        for (std::size_t ti = 0; ti < obj.tags.size(); ++ti) {
            const auto& t = obj.tags[ti].tag;
            RegistryEntry e;
            e.tag_id = t.id;
            e.object_index = oi;
            e.tag_index = ti;
            e.tag = t;
            e.guard = std::max(3.0 * t.f0 * (bin_ratio - 1.0), t.f0 / (2.0 * t.q));
            e.band_lo = t.f0 * (1.0 - t.alpha) - e.guard;
            e.band_hi = t.f0 + e.guard;
            reg.entries_.push_back(std::move(e));
        }
    }
    std::sort(reg.entries_.begin(), reg.entries_.end(),
              [](const RegistryEntry& a, const RegistryEntry& b) { return a.band_lo < b.band_lo; });
    for (std::size_t i = 1; i < reg.entries_.size(); ++i) {
        const auto& a = reg.entries_[i - 1];
        const auto& b = reg.entries_[i];
        if (b.band_lo <= a.band_hi) {
            throw ConfigError("guard bands of tags '" + a.tag_id + "' and '" + b.tag_id + "' overlap");
        }
    }
    for (std::size_t i = 0; i < reg.entries_.size(); ++i) {
        for (std::size_t j = i + 1; j < reg.entries_.size(); ++j) {
            if (reg.entries_[i].tag_id == reg.entries_[j].tag_id) {
                throw ConfigError("duplicate tag id '" + reg.entries_[i].tag_id + "'");
            }
        }
    }
    return reg;
}

std::optional<std::size_t> TagRegistry::find(double freq) const {
    auto it = std::upper_bound(entries_.begin(), entries_.end(), freq,
                               [](double f, const RegistryEntry& e) { return f < e.band_lo; });
    if (it == entries_.begin()) return std::nullopt;
    --it;
    if (!it->contains(freq)) return std::nullopt;
    return static_cast<std::size_t>(it - entries_.begin());
}

CalibrationState calibrate(const Oscillator& osc, double gate, std::int64_t frame_index) {
    if (!(gate >= 10e-3)) throw DomainError("calibration gate must be at least 10 ms");
    if (!(osc.nominal_hz > 0.0)) throw DomainError("calibration frequency must be positive");
    const double cycles = std::floor(osc.actual_hz() * gate);
    if (!(cycles > 0.0)) throw FaultError("oscillator produced no cycles during the calibration gate");
    const double measured = cycles / gate;
    CalibrationState cal;
    cal.freq_scale = osc.nominal_hz / measured;
    cal.last_calibrated = frame_index;
    if (!(cal.freq_scale >= 0.9 && cal.freq_scale <= 1.1)) {
        throw FaultError("oscillator drift beyond the correctable range");
    }
    return cal;
}

Association associate(std::span<const Peak> peaks, const TagRegistry& registry, const CalibrationState& cal,
                      const tagphys::BridgeScale& bridge, std::int64_t frame_index) {
    Association out;
    std::vector<std::optional<std::size_t>> owner(registry.size());
    std::vector<TagObservation> best(registry.size());
    for (const auto& p : peaks) {
        const double f = cal.correct(p.center_freq);
        const auto idx = registry.find(f);
        if (!idx) {
            out.anomalies.push_back({f, p.amplitude, "no tag band"});
            continue;
        }
        const auto& e = registry[*idx];
        // a resonance much broader than the tag's own bandwidth is a baseline artefact
        if (p.width / cal.freq_scale > kMaxWidthRatio * f / e.tag.q) {
            out.anomalies.push_back({f, p.amplitude, "too broad for '" + e.tag_id + "'"});
            continue;
        }
        TagObservation obs;
        obs.tag_id = e.tag_id;
        obs.registry_index = *idx;
        obs.freq = f;
        obs.raw_amplitude = p.amplitude;
        obs.amplitude = p.amplitude / tagphys::unit_peak(e.tag, f, bridge);
        obs.width = p.width / cal.freq_scale;
        obs.merged = p.merged_flag;
        obs.frame_index = frame_index;
        if (owner[*idx]) {
            auto& held = best[*idx];
            if (obs.raw_amplitude > held.raw_amplitude) std::swap(held, obs);
            out.anomalies.push_back({obs.freq, obs.raw_amplitude, "second peak in band of '" + e.tag_id + "'"});
        } else {
            owner[*idx] = *idx;
            best[*idx] = std::move(obs);
        }
    }
    for (std::size_t i = 0; i < registry.size(); ++i) {
        if (owner[i]) out.observations.push_back(std::move(best[i]));
    }
    return out;
}

void AssemblerConfig::validate() const {
    if (!(on_threshold > off_threshold && off_threshold > 0.0)) {
        throw ConfigError("hysteresis needs on_threshold > off_threshold > 0");
    }
    if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) throw ConfigError("ema_alpha must lie in (0, 1]");
    if (!(frame_period > 0.0)) throw ConfigError("frame period must be positive");
}

Assembler::Assembler(const TagRegistry& registry, AssemblerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    tracks_.resize(registry.size());
    for (std::size_t i = 0; i < registry.size(); ++i) tracks_[i].tag_id = registry[i].tag_id;
}

void Assembler::adopt(const Assembler& previous) {
    for (auto& t : tracks_) {
        auto it = std::find_if(previous.tracks_.begin(), previous.tracks_.end(),
                               [&](const TagTrack& old) { return old.tag_id == t.tag_id; });
        if (it != previous.tracks_.end()) t = *it;
    }
}

TrackFrame Assembler::update(std::int64_t frame_index, double timestamp, const Association& assoc) {
    std::vector<const TagObservation*> seen(tracks_.size(), nullptr);
    for (const auto& o : assoc.observations) {
        if (o.registry_index >= tracks_.size()) throw DomainError("observation refers to an unknown registry entry");
        seen[o.registry_index] = &o;
    }
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
        auto& t = tracks_[i];
        const double prev = t.amplitude;
        t.observed = seen[i] != nullptr;
        t.raw = t.observed ? seen[i]->amplitude : 0.0;
        if (t.observed) t.freq = seen[i]->freq;
        if (!t.present && t.observed) {
            t.amplitude = t.raw;
        } else {
            t.amplitude = cfg_.ema_alpha * t.raw + (1.0 - cfg_.ema_alpha) * t.amplitude;
        }
        t.slope = (t.amplitude - prev) / cfg_.frame_period;
        if (!t.present && t.amplitude >= cfg_.on_threshold) {
            t.present = true;
        } else if (t.present && t.amplitude < cfg_.off_threshold) {
            t.present = false;
        }
    }
    TrackFrame out;
    out.frame_index = frame_index;
    out.timestamp = timestamp;
    out.tracks = tracks_;
    out.anomalies = assoc.anomalies;
    return out;
}

} // namespace rtag::tracker
