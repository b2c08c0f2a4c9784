#include "rtag/sweepchain.hpp"

#include "rtag/error.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>

namespace rtag::sweepchain {

using tagphys::kPi;

void SweepConfig::validate() const {
    if (!(f_start > 0.0 && f_end > f_start)) throw ConfigError("sweep requires f_end > f_start > 0");
    if (!(frame_period > 0.0)) throw ConfigError("sweep frame period must be positive");
    if (bins < 256) throw ConfigError("sweep needs at least 256 bins");
    if (!(noise_rms >= 0.0)) throw ConfigError("noise rms must be non-negative");
    if (!(std::abs(osc_drift) < 0.1)) throw ConfigError("oscillator drift must stay within 10%");
}

double chirp_freq(double t, const SweepConfig& cfg) {
    if (!(t >= 0.0 && t <= cfg.frame_period)) throw DomainError("chirp time outside the frame");
    return cfg.f_start * std::pow(cfg.f_end / cfg.f_start, t / cfg.frame_period);
}

std::vector<double> bin_frequencies(const SweepConfig& cfg) {
    std::vector<double> f(static_cast<std::size_t>(cfg.bins));
    for (int k = 0; k < cfg.bins; ++k) {
        const double t = k == cfg.bins - 1 ? cfg.frame_period : cfg.frame_period * k / (cfg.bins - 1);
        f[static_cast<std::size_t>(k)] = chirp_freq(t, cfg);
    }
    return f;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser over the combined words
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

GaussianSource::GaussianSource(std::uint64_t seed) : engine_(seed) {}

double GaussianSource::uniform() {
    // (0, 1], never zero so the logarithm below stays finite
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
}

double GaussianSource::next() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double th = 2.0 * kPi * uniform();
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
}

std::vector<TagDrive> tag_drives(std::span<const PlacedObject> scene, const tagphys::CouplingModel& field) {
    std::vector<TagDrive> out;
    for (const auto& obj : scene) {
        obj.pose.validate();
        const Vec3 b = field.field(obj.pose.position) / field.b_ref();
        for (std::size_t i = 0; i < obj.spec->tags.size(); ++i) {
            const auto& mt = obj.spec->tags[i];
            const Vec3 n = obj.pose.orientation * mt.normal;
            const bool driven = obj.spec->param_tag && *obj.spec->param_tag == i;
            out.push_back({&mt.tag, n.dot(b), driven ? obj.param : 0.0});
        }
    }
    return out;
}

Synthesis bridge_response(std::span<const PlacedObject> scene, const tagphys::CouplingModel& field,
                          const tagphys::BridgeScale& bridge, const SweepConfig& cfg,
                          std::int64_t frame_index) {
    const auto drives = tag_drives(scene, field);
    return bridge_response(drives, bridge, cfg, frame_index);
}

Synthesis bridge_response(std::span<const TagDrive> drives, const tagphys::BridgeScale& bridge,
                          const SweepConfig& cfg, std::int64_t frame_index) {
    cfg.validate();
    Synthesis out;
    auto& frame = out.frame;
    frame.frame_index = frame_index;
    frame.timestamp = static_cast<double>(frame_index) * cfg.frame_period;
    frame.freq_axis = bin_frequencies(cfg);
    const std::size_t n = frame.freq_axis.size();
    std::vector<std::complex<double>> sum(n);

    for (const auto& d : drives) {
        const double fe = tagphys::effective_f0(*d.tag, d.param);
        if (fe < cfg.f_start || fe > cfg.f_end) {
            out.warnings.push_back("tag '" + d.tag->id + "' resonates outside the sweep and is invisible");
            continue;
        }
        if (d.coupling == 0.0) continue;
        for (std::size_t k = 0; k < n; ++k) {
            const double f_true = frame.freq_axis[k] * (1.0 + cfg.osc_drift);
            sum[k] += tagphys::reflected_impedance(*d.tag, d.coupling, f_true, bridge.m_ref, d.param);
        }
    }

    frame.magnitude.resize(n);
    if (cfg.noise_rms > 0.0) {
        GaussianSource noise(mix_seed(cfg.seed, static_cast<std::uint64_t>(frame_index)));
        const double sigma = cfg.noise_rms / std::sqrt(2.0);
        for (std::size_t k = 0; k < n; ++k) {
            const double re = sum[k].real() / bridge.z_norm + sigma * noise.next();
            const double im = sum[k].imag() / bridge.z_norm + sigma * noise.next();
            frame.magnitude[k] = std::hypot(re, im);
        }
    } else {
        for (std::size_t k = 0; k < n; ++k) frame.magnitude[k] = std::abs(sum[k]) / bridge.z_norm;
    }
    return out;
}

namespace {

double median_of(std::vector<double>& v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
    return m;
}

} // namespace

SpectrumFrame shape(const SpectrumFrame& frame, int baseline_window) {
    if (baseline_window < 3 || baseline_window % 2 == 0) {
        throw DomainError("baseline window must be odd and at least 3");
    }
    const auto n = static_cast<std::ptrdiff_t>(frame.size());
    const std::ptrdiff_t half = baseline_window / 2;
    const std::ptrdiff_t guard = baseline_window / 4;
    SpectrumFrame out = frame;
    std::vector<double> ring, full;
    ring.reserve(static_cast<std::size_t>(baseline_window));
    full.reserve(static_cast<std::size_t>(baseline_window));
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        ring.clear();
        full.clear();
        const auto lo = std::max<std::ptrdiff_t>(0, i - half);
        const auto hi = std::min<std::ptrdiff_t>(n - 1, i + half);
        for (auto k = lo; k <= hi; ++k) {
            const double v = frame.magnitude[static_cast<std::size_t>(k)];
            full.push_back(v);
            if (std::abs(k - i) > guard) ring.push_back(v);
        }
        // the ring median ignores a broad peak at i; the full median ignores strong neighbours in the ring
        double median = median_of(full);
        if (ring.size() >= 3) median = std::min(median, median_of(ring));
        out.magnitude[static_cast<std::size_t>(i)] =
            std::max(0.0, frame.magnitude[static_cast<std::size_t>(i)] - median);
    }
    return out;
}

void write_spectrum_csv(const SpectrumFrame& frame, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write spectrum dump " + path.string());
    os.precision(10);
    os << "bin,freq_hz,magnitude\n";
    for (std::size_t k = 0; k < frame.size(); ++k) {
        os << k << ',' << frame.freq_axis[k] << ',' << frame.magnitude[k] << '\n';
    }
    if (!os) throw IoError("failed writing spectrum dump " + path.string());
}

} // namespace rtag::sweepchain
