// Live service: paces the pipeline at the frame rate, broadcasts per-frame
// messages over a websocket (/ws) and answers GET /health on the same port.
// Client mutations are queued and applied at the next frame boundary.
#pragma once

#include "rtag/pipeline.hpp"
#include "rtag/scene.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace rtag::service {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8765; ///< 0 picks a free port
    std::uint64_t seed = 1;
    std::size_t spectrum_points = 512;
    std::optional<std::filesystem::path> record; ///< accepted mutations, replayable by simulate
};

/// Lateness of frame production against the ideal frame grid [ms].
struct JitterStats {
    std::int64_t frames = 0;
    double p50 = 0.0;
    double p95 = 0.0;
    double p99 = 0.0;
    double max = 0.0;
};

class Server {
public:
    /// Binds the listening socket. Throws IoError when the port is busy.
    Server(harness::Scene scene, ServiceOptions opts);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    std::uint16_t port() const noexcept;

    /// Starts the network and frame threads.
    void start();
    /// Blocks until stop() is called or a stage error ends the session.
    /// Rethrows the stage error, if any.
    void wait();
    void stop();
    /// True once the session has ended (stopped or failed).
    bool finished() const;

    JitterStats jitter() const;
    std::int64_t frames() const;
    std::size_t clients() const;
    nlohmann::json health() const;

    struct Impl; ///< defined in the implementation file

private:
    std::unique_ptr<Impl> impl_;
};

} // namespace rtag::service
