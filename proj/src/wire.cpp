#include "rtag/wire.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iterator>

namespace rtag::harness {

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
    std::array<std::uint16_t, 256> table{};
    for (int i = 0; i < 256; ++i) {
        std::uint16_t crc = static_cast<std::uint16_t>(i << 8);
        for (int b = 0; b < 8; ++b) crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021) : static_cast<std::uint16_t>(crc << 1);
        table[static_cast<std::size_t>(i)] = crc;
    }
    return table;
}

constexpr auto kCrcTable = make_crc_table();

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::size_t frame_size(std::size_t count) { return kWireHeader + kWirePeakSize * count + 2; }

enum class Check { Ok, NeedMore, BadHeader, BadCrc };

// Validates the candidate frame starting at p (sync already matched).
Check check_frame(const std::uint8_t* p, std::size_t available) {
    if (available < kWireHeader) return Check::NeedMore;
    if (p[2] != kWireVersion || p[5] > kMaxWirePeaks) return Check::BadHeader;
    const std::size_t total = frame_size(p[5]);
    if (available < total) return Check::NeedMore;
    const auto crc = crc16_ccitt_false(std::span(p + 2, total - 4));
    return crc == get_u16(p + total - 2) ? Check::Ok : Check::BadCrc;
}

WireFrame parse_frame(const std::uint8_t* p) {
    WireFrame f;
    f.counter = get_u16(p + 3);
    const std::size_t n = p[5];
    f.peaks.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* q = p + kWireHeader + kWirePeakSize * i;
        f.peaks[i] = {get_u32(q), get_u16(q + 4), get_u16(q + 6)};
    }
    return f;
}

template <class T>
T clamp_round(double v) {
    const double hi = static_cast<double>(std::numeric_limits<T>::max());
    if (!(v > 0.0)) return 0;
    return static_cast<T>(std::min(hi, std::round(v)));
}

} // namespace

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> bytes) noexcept {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t b : bytes) crc = static_cast<std::uint16_t>((crc << 8) ^ kCrcTable[((crc >> 8) ^ b) & 0xFF]);
    return crc;
}

void append_wire(const WireFrame& frame, std::vector<std::uint8_t>& out) {
    if (frame.peaks.size() > kMaxWirePeaks) throw DomainError("wire frame carries more than 32 peaks");
    const std::size_t start = out.size();
    out.push_back(kSync0);
    out.push_back(kSync1);
    out.push_back(kWireVersion);
    put_u16(out, frame.counter);
    out.push_back(static_cast<std::uint8_t>(frame.peaks.size()));
    for (const auto& p : frame.peaks) {
        put_u32(out, p.freq_hz);
        put_u16(out, p.amplitude);
        put_u16(out, p.width_hz);
    }
    put_u16(out, crc16_ccitt_false(std::span(out.data() + start + 2, out.size() - start - 2)));
}

std::vector<std::uint8_t> encode_wire(const WireFrame& frame) {
    std::vector<std::uint8_t> out;
    out.reserve(frame_size(frame.peaks.size()));
    append_wire(frame, out);
    return out;
}

WireFrame decode_wire(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != kSync0 || bytes[1] != kSync1) throw IntegrityError("wire frame lacks the AA 55 sync");
    switch (check_frame(bytes.data(), bytes.size())) {
    case Check::NeedMore: throw IntegrityError("wire frame is truncated");
    case Check::BadHeader: throw IntegrityError("wire frame has a bad version or peak count");
    case Check::BadCrc: throw IntegrityError("wire frame CRC mismatch");
    case Check::Ok: break;
    }
    if (bytes.size() != frame_size(bytes[5])) throw IntegrityError("wire frame has trailing bytes");
    return parse_frame(bytes.data());
}

WireFrame to_wire(std::int64_t frame_index, std::span<const tracker::Peak> peaks) {
    std::vector<tracker::Peak> kept(peaks.begin(), peaks.end());
    if (kept.size() > kMaxWirePeaks) {
        std::stable_sort(kept.begin(), kept.end(),
                         [](const tracker::Peak& a, const tracker::Peak& b) { return a.amplitude > b.amplitude; });
        kept.resize(kMaxWirePeaks);
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const tracker::Peak& a, const tracker::Peak& b) { return a.center_freq < b.center_freq; });
    WireFrame f;
    f.counter = static_cast<std::uint16_t>(static_cast<std::uint64_t>(frame_index) & 0xFFFF);
    for (const auto& p : kept)
        f.peaks.push_back({clamp_round<std::uint32_t>(p.center_freq), clamp_round<std::uint16_t>(p.amplitude * 65535.0),
                           clamp_round<std::uint16_t>(p.width)});
    return f;
}

std::vector<WireFrame> WireDecoder::feed(std::span<const std::uint8_t> bytes) {
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
    std::vector<WireFrame> out;
    while (true) {
        const auto begin = buffer_.begin() + static_cast<std::ptrdiff_t>(pos_);
        const std::array<std::uint8_t, 2> sync{kSync0, kSync1};
        const auto hit = std::search(begin, buffer_.end(), sync.begin(), sync.end());
        if (hit == buffer_.end()) {
            // keep a trailing AA that may start the next sync pair
            std::size_t keep = (!buffer_.empty() && buffer_.size() > pos_ && buffer_.back() == kSync0) ? 1 : 0;
            stats_.skipped_bytes += buffer_.size() - pos_ - keep;
            pos_ = buffer_.size() - keep;
            break;
        }
        const auto at = static_cast<std::size_t>(hit - buffer_.begin());
        stats_.skipped_bytes += at - pos_;
        pos_ = at;
        const auto check = check_frame(buffer_.data() + pos_, buffer_.size() - pos_);
        if (check == Check::NeedMore) break;
        if (check == Check::Ok) {
            out.push_back(parse_frame(buffer_.data() + pos_));
            ++stats_.frames;
            pos_ += frame_size(buffer_[pos_ + 5]);
            continue;
        }
        if (check == Check::BadHeader) ++stats_.header_errors;
        if (check == Check::BadCrc) ++stats_.crc_errors;
        ++stats_.skipped_bytes;
        ++pos_;
    }
    if (pos_ > 0) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ = 0;
    }
    return out;
}

std::vector<WireFrame> WireDecoder::finish() {
    std::vector<WireFrame> out;
    while (!buffer_.empty()) {
        // the head candidate (if any) cannot complete: drop its first byte and rescan
        if (buffer_.size() >= 2 && buffer_[0] == kSync0 && buffer_[1] == kSync1) ++stats_.truncated;
        ++stats_.skipped_bytes;
        std::vector<std::uint8_t> rest(buffer_.begin() + 1, buffer_.end());
        buffer_.clear();
        auto frames = feed(rest);
        out.insert(out.end(), std::make_move_iterator(frames.begin()), std::make_move_iterator(frames.end()));
    }
    return out;
}

std::uint64_t sweep_hash(const sweepchain::SweepConfig& cfg) {
    char buf[160];
    const int n = std::snprintf(buf, sizeof buf, "f_start=%.17g;f_end=%.17g;frame_period=%.17g;bins=%d", cfg.f_start,
                                cfg.f_end, cfg.frame_period, cfg.bins);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 0; i < n; ++i) {
        h ^= static_cast<std::uint8_t>(buf[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

CaptureWriter::CaptureWriter(const std::filesystem::path& path, const sweepchain::SweepConfig& sweep)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    std::vector<std::uint8_t> header{'T', 'R', 'N', 'K'};
    put_u16(header, 1);
    put_u16(header, 0);
    put_u64(header, sweep_hash(sweep));
    out_.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
}

void CaptureWriter::write(const WireFrame& frame) {
    const auto bytes = encode_wire(frame);
    out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out_.flush();
    if (!out_) throw IoError("write to " + path_.string() + " failed");
}

Capture read_capture(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kCaptureHeader || !std::equal(bytes.begin(), bytes.begin() + 4, "TRNK"))
        throw IntegrityError(path.string() + " is not a wire capture");
    Capture cap;
    cap.version = get_u16(bytes.data() + 4);
    if (cap.version != 1) throw IntegrityError(path.string() + ": unsupported capture version");
    cap.sweep_hash = static_cast<std::uint64_t>(get_u32(bytes.data() + 8)) |
                     (static_cast<std::uint64_t>(get_u32(bytes.data() + 12)) << 32);
    WireDecoder dec;
    cap.frames = dec.feed(std::span(bytes).subspan(kCaptureHeader));
    auto tail = dec.finish();
    cap.frames.insert(cap.frames.end(), tail.begin(), tail.end());
    cap.stats = dec.stats();
    return cap;
}

} // namespace rtag::harness
