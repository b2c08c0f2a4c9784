// Serial wire protocol between reader and host, and wire capture files.
//
// Frame layout, little-endian:
//   AA 55 | version 01 | counter u16 | count u8 (<= 32)
//   | count x {freq_hz u32, amplitude u16 (full scale 65535), width_hz u16}
//   | CRC-16/CCITT-FALSE u16 over every byte after the sync pair
#pragma once

#include "rtag/error.hpp"
#include "rtag/sweepchain.hpp"
#include "rtag/tracker.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

namespace rtag::harness {

inline constexpr std::uint8_t kSync0 = 0xAA;
inline constexpr std::uint8_t kSync1 = 0x55;
inline constexpr std::uint8_t kWireVersion = 0x01;
inline constexpr std::size_t kMaxWirePeaks = 32;
inline constexpr std::size_t kWireHeader = 6;
inline constexpr std::size_t kWirePeakSize = 8;

/// CRC mismatch or a malformed frame.
class IntegrityError : public Error {
public:
    using Error::Error;
};

struct WirePeak {
    std::uint32_t freq_hz = 0;
    std::uint16_t amplitude = 0;
    std::uint16_t width_hz = 0;
    bool operator==(const WirePeak&) const = default;
};

struct WireFrame {
    std::uint16_t counter = 0;
    std::vector<WirePeak> peaks;
    bool operator==(const WireFrame&) const = default;
};

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> bytes) noexcept;

/// Throws DomainError for more than 32 peaks.
std::vector<std::uint8_t> encode_wire(const WireFrame& frame);
void append_wire(const WireFrame& frame, std::vector<std::uint8_t>& out);

/// Decodes exactly one frame. Throws IntegrityError on bad sync, version,
/// count, length or CRC.
WireFrame decode_wire(std::span<const std::uint8_t> bytes);

/// Quantises peaks: frequency and width rounded to hertz, amplitude scaled so
/// 1.0 maps to 65535, all clamped to their fields. The strongest 32 are kept,
/// in frequency order.
WireFrame to_wire(std::int64_t frame_index, std::span<const tracker::Peak> peaks);

/// Streaming decoder that resynchronises on AA 55 after corruption.
class WireDecoder {
public:
    struct Stats {
        std::uint64_t frames = 0;
        std::uint64_t crc_errors = 0;
        std::uint64_t header_errors = 0; ///< bad version or count after a sync pair
        std::uint64_t skipped_bytes = 0;
        std::uint64_t truncated = 0;     ///< incomplete frames dropped at finish()
    };

    /// Appends bytes and returns every complete frame found.
    std::vector<WireFrame> feed(std::span<const std::uint8_t> bytes);
    /// Ends the stream: frames still hidden behind an incomplete candidate are
    /// recovered, and the incomplete remainder is counted and discarded.
    std::vector<WireFrame> finish();
    const Stats& stats() const noexcept { return stats_; }

private:
    std::vector<std::uint8_t> buffer_;
    std::size_t pos_ = 0;
    Stats stats_;
};

/// 64-bit FNV-1a over a canonical rendering of the sweep configuration.
std::uint64_t sweep_hash(const sweepchain::SweepConfig& cfg);

inline constexpr std::size_t kCaptureHeader = 16;

/// Capture file: "TRNK", version u16, reserved u16, sweep hash u64, then raw frames.
class CaptureWriter {
public:
    CaptureWriter(const std::filesystem::path& path, const sweepchain::SweepConfig& sweep);
    void write(const WireFrame& frame);

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

struct Capture {
    std::uint16_t version = 0;
    std::uint64_t sweep_hash = 0;
    std::vector<WireFrame> frames;
    WireDecoder::Stats stats;
};

/// Throws IoError when the file cannot be read, IntegrityError on a bad header.
Capture read_capture(const std::filesystem::path& path);

} // namespace rtag::harness
