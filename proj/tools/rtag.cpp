// rtag command-line driver: simulate, serve, ringdown-timing, export-midi, validate.
#include "rtag/pipeline.hpp"
#include "rtag/ringdown.hpp"
#include "rtag/scene.hpp"
#include "rtag/service.hpp"
#include "rtag/trinkets.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

namespace {

using namespace rtag;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

int simulate(const std::string& scene_path, double duration, std::uint64_t seed, const std::string& out,
             bool dump_spectra, bool dump_ringdown, const std::string& wire, const std::string& mutations) {
    const auto scene = harness::load_scene(scene_path);
    harness::RunOptions opts;
    opts.duration = duration;
    opts.seed = seed;
    opts.out_dir = out;
    opts.dump_spectra = dump_spectra;
    opts.dump_ringdown = dump_ringdown;
    if (!wire.empty()) opts.wire_capture = wire;
    if (!mutations.empty()) opts.mutations = harness::read_mutation_log(mutations);
    const auto report = harness::run(scene, opts);
    auto j = report.to_json();
    j["scene"] = scene.name;
    j["seed"] = seed;
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int serve(const std::string& scene_path, int port, std::uint64_t seed, const std::string& host, const std::string& record) {
    service::ServiceOptions opts;
    opts.port = static_cast<std::uint16_t>(port);
    opts.seed = seed;
    opts.host = host;
    if (!record.empty()) opts.record = record;
    service::Server server(harness::load_scene(scene_path), opts);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.start();
    std::cerr << "serving " << server.health()["scene"]["name"].get<std::string>() << " on ws://" << host << ':'
              << server.port() << "/ws (health: http://" << host << ':' << server.port() << "/health)\n";
    while (!g_interrupted && !server.finished()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    server.wait();
    const auto jit = server.jitter();
    std::cerr << "stopped after " << server.frames() << " frames; jitter p95 " << jit.p95 << " ms\n";
    return kExitOk;
}

int ringdown_timing(int tags, double dwell_ms) {
    if (tags < 0) throw DomainError("--tags must be non-negative");
    const double total_ms = ringdown::schedule(static_cast<std::size_t>(tags), dwell_ms / 1000.0) * 1000.0;
    const double frame_ms = 1000.0 / 30.0;
    std::printf("ringdown: %d tags x %g ms = %g ms per read cycle\n", tags, dwell_ms, total_ms);
    std::printf("swept: one chirp reads all tags every %.1f ms\n", frame_ms);
    std::printf("ringdown %s the swept frame period (%g ms %s %.1f ms)\n", total_ms > frame_ms ? "exceeds" : "fits within",
                total_ms, total_ms > frame_ms ? ">" : "<=", frame_ms);
    return kExitOk;
}

int export_midi(const std::string& log, const std::string& out) {
    const auto events = trinkets::read_jsonl(log);
    trinkets::write_smf(events, out);
    std::printf("wrote %zu events to %s\n", events.size(), out.c_str());
    return kExitOk;
}

int validate(const std::string& scene_path) {
    const auto scene = harness::load_scene(scene_path);
    std::cout << harness::scene_summary(scene).dump(2) << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Resonant-tag trinkets simulator"};
    app.require_subcommand(1);

    std::string scene, out, wire, mutations, log, midi_out, host = "127.0.0.1", record;
    double duration = 10.0;
    double dwell_ms = 6.0;
    std::uint64_t seed = 1;
    int port = 8765;
    int tags = 16;
    bool dump_spectra = false, dump_ringdown = false;

    auto* sim = app.add_subcommand("simulate", "Run the pipeline offline and write the event log");
    sim->add_option("--scene", scene, "Scene JSON")->required();
    sim->add_option("--duration", duration, "Seconds of frames")->check(CLI::NonNegativeNumber);
    sim->add_option("--seed", seed, "Noise seed");
    sim->add_option("--out", out, "Output directory")->required();
    sim->add_flag("--dump-spectra", dump_spectra, "Write shaped spectra per frame");
    sim->add_flag("--dump-ringdown", dump_ringdown, "Write 6 ms ringdown captures per tag");
    sim->add_option("--wire-capture", wire, "Write a wire capture file");
    sim->add_option("--mutations", mutations, "Replay a recorded mutation log");

    auto* srv = app.add_subcommand("serve", "Run the live service");
    srv->add_option("--scene", scene, "Scene JSON")->required();
    srv->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
    srv->add_option("--host", host, "Listen address");
    srv->add_option("--seed", seed, "Noise seed");
    srv->add_option("--record", record, "Record accepted mutations for replay");

    auto* rt = app.add_subcommand("ringdown-timing", "Compare sequential ringdown reads with one chirp");
    rt->add_option("--tags", tags, "Tag count");
    rt->add_option("--dwell", dwell_ms, "Per-tag dwell [ms]");

    auto* em = app.add_subcommand("export-midi", "Convert an event log to a standard MIDI file");
    em->add_option("--log", log, "events.jsonl")->required();
    em->add_option("--out", midi_out, "Output .mid")->required();

    auto* val = app.add_subcommand("validate", "Validate a scene file");
    val->add_option("--scene", scene, "Scene JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*sim) return simulate(scene, duration, seed, out, dump_spectra, dump_ringdown, wire, mutations);
        if (*srv) return serve(scene, port, seed, host, record);
        if (*rt) return ringdown_timing(tags, dwell_ms);
        if (*em) return export_midi(log, midi_out);
        if (*val) return validate(scene);
    } catch (const harness::StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const ConfigError& e) {
        std::cerr << "invalid: " << e.what() << '\n';
        return kExitValidation;
    } catch (const IoError& e) {
        std::cerr << "invalid: " << e.what() << '\n';
        return kExitValidation;
    } catch (const DomainError& e) {
        std::cerr << "invalid: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitValidation;
}
