#include "rtag/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

namespace rtag::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kMaxBacklog = 256;

class WsSession;

struct Pending {
    std::weak_ptr<WsSession> from;
    json mutation;
};

} // namespace

struct Server::Impl {
    Impl(harness::Scene scene, ServiceOptions o)
        : opts(std::move(o)), pipeline(std::move(scene), opts.seed), acceptor(ioc) {
        summary = harness::scene_summary(pipeline.scene());
        period = pipeline.scene().sweep.frame_period;
        try {
            const tcp::endpoint ep(asio::ip::make_address(opts.host), opts.port);
            acceptor.open(ep.protocol());
            acceptor.set_option(asio::socket_base::reuse_address(true));
            acceptor.bind(ep);
            acceptor.listen();
        } catch (const boost::system::system_error& e) {
            throw IoError("cannot listen on " + opts.host + ":" + std::to_string(opts.port) + ": " + e.code().message());
        }
        if (opts.record) {
            record.open(*opts.record, std::ios::binary | std::ios::trunc);
            if (!record) throw IoError("cannot write mutation log " + opts.record->string());
        }
    }

    void accept();
    void frame_loop();
    void enqueue(std::weak_ptr<WsSession> from, json mutation);
    void broadcast(std::shared_ptr<const std::string> msg);
    void finish(std::exception_ptr error);
    json health() const;

    ServiceOptions opts;
    harness::Pipeline pipeline;
    double period = 1.0 / 30.0;

    asio::io_context ioc;
    tcp::acceptor acceptor;
    std::set<std::shared_ptr<WsSession>> sessions; // network thread only
    std::atomic<std::size_t> client_count{0};

    std::thread net_thread;
    std::thread frame_thread;
    bool started = false;

    mutable std::mutex mu;
    std::condition_variable cv;
    bool stopping = false;
    bool done = false;
    std::exception_ptr error;
    std::deque<Pending> queue;
    std::vector<double> jitter_ms;
    std::int64_t frame_count = 0;
    json summary;
    std::ofstream record;
};

namespace {

json error_reply(const json& id, const std::string& what) {
    json j{{"type", "error"}, {"message", what}};
    if (!id.is_null()) j["id"] = id;
    return j;
}

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, Server::Impl& srv) : ws_(std::move(socket)), srv_(srv) {}

    void run(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

    void send(std::shared_ptr<const std::string> msg, bool droppable) {
        if (closed_) return;
        if (droppable && queue_.size() >= kMaxBacklog) return;
        queue_.push_back(std::move(msg));
        if (queue_.size() == 1) write_next();
    }

    void send(const json& j) { send(std::make_shared<const std::string>(j.dump()), false); }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return;
        srv_.sessions.insert(shared_from_this());
        ++srv_.client_count;
        json hello{{"type", "hello"}};
        {
            std::lock_guard lock(srv_.mu);
            hello["scene"] = srv_.summary;
            hello["frame_index"] = srv_.frame_count;
        }
        send(hello);
        read();
    }

    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec) return close();
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        json msg;
        try {
            msg = json::parse(text);
        } catch (const json::parse_error& e) {
            send(error_reply(nullptr, std::string("malformed message: ") + e.what()));
            return read();
        }
        if (!msg.is_object() || !msg.contains("op") || !msg["op"].is_string()) {
            send(error_reply(msg.is_object() && msg.contains("id") ? msg["id"] : json(nullptr),
                             "message must be an object with a string 'op'"));
            return read();
        }
        srv_.enqueue(weak_from_this(), std::move(msg));
        read();
    }

    void write_next() {
        ws_.text(true);
        ws_.async_write(asio::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return self->close();
            self->queue_.pop_front();
            if (!self->queue_.empty()) self->write_next();
        });
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        queue_.clear();
        if (srv_.sessions.erase(shared_from_this()) > 0) --srv_.client_count;
    }

    websocket::stream<beast::tcp_stream> ws_;
    Server::Impl& srv_;
    beast::flat_buffer buffer_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, Server::Impl& srv) : stream_(std::move(socket)), srv_(srv) {}

    void run() {
        stream_.expires_after(std::chrono::seconds(10));
        http::async_read(stream_, buffer_, req_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

private:
    void on_read(beast::error_code ec) {
        if (ec) return;
        if (websocket::is_upgrade(req_)) {
            if (req_.target() != "/ws") return respond(http::status::not_found, error_reply(nullptr, "websocket path is /ws"));
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), srv_)->run(std::move(req_));
            return;
        }
        if (req_.method() == http::verb::get && req_.target() == "/health") return respond(http::status::ok, srv_.health());
        respond(http::status::not_found, error_reply(nullptr, "unknown path"));
    }

    void respond(http::status status, const json& body) {
        auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
        res->set(http::field::content_type, "application/json");
        res->set(http::field::access_control_allow_origin, "*");
        res->keep_alive(false);
        res->body() = body.dump();
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    beast::tcp_stream stream_;
    Server::Impl& srv_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
};

} // namespace

void Server::Impl::accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
        if (ec) return;
        std::make_shared<HttpSession>(std::move(socket), *this)->run();
        accept();
    });
}

void Server::Impl::enqueue(std::weak_ptr<WsSession> from, json mutation) {
    std::lock_guard lock(mu);
    queue.push_back({std::move(from), std::move(mutation)});
}

void Server::Impl::broadcast(std::shared_ptr<const std::string> msg) {
    auto snapshot = sessions;
    for (const auto& s : snapshot) s->send(msg, true);
}

json Server::Impl::health() const {
    std::lock_guard lock(mu);
    const auto j = harness::percentiles(jitter_ms);
    return {{"status", "ok"},
            {"scene", summary},
            {"frame_index", frame_count},
            {"clients", client_count.load()},
            {"jitter_ms", {{"p50", j.p50}, {"p95", j.p95}, {"p99", j.p99}, {"max", j.max}}}};
}

void Server::Impl::finish(std::exception_ptr e) {
    {
        std::lock_guard lock(mu);
        if (e && !error) error = e;
        done = true;
        stopping = true;
    }
    cv.notify_all();
}

void Server::Impl::frame_loop() {
    const auto step = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(period));
    auto next = Clock::now();
    std::optional<Clock::time_point> last;
    try {
        while (true) {
            {
                std::unique_lock lock(mu);
                if (cv.wait_until(lock, next, [&] { return stopping; })) break;
            }
            std::deque<Pending> batch;
            {
                std::lock_guard lock(mu);
                batch.swap(queue);
            }
            bool scene_changed = false;
            for (auto& p : batch) {
                const json id = p.mutation.contains("id") ? p.mutation["id"] : json(nullptr);
                json reply;
                try {
                    json m = p.mutation;
                    m.erase("id");
                    reply = pipeline.apply(m);
                    reply["type"] = "ack";
                    if (!id.is_null()) reply["id"] = id;
                    if (record.is_open()) {
                        record << harness::mutation_log_line({reply["frame_index"].get<std::int64_t>(), m}) << '\n';
                        record.flush();
                    }
                    scene_changed = scene_changed || m["op"] == "load_scene" || m["op"] == "add_object" ||
                                    m["op"] == "remove_object";
                } catch (const harness::MutationError& e) {
                    reply = error_reply(id, e.what());
                }
                asio::post(ioc, [from = p.from, reply = std::move(reply)] {
                    if (auto s = from.lock()) s->send(reply);
                });
            }
            if (scene_changed) {
                std::lock_guard lock(mu);
                summary = harness::scene_summary(pipeline.scene());
            }

            const auto out = pipeline.step();
            auto msg = std::make_shared<const std::string>(harness::frame_message(out, opts.spectrum_points).dump());
            asio::post(ioc, [this, msg] { broadcast(msg); });

            const auto now = Clock::now();
            {
                std::lock_guard lock(mu);
                if (last) jitter_ms.push_back(std::abs(std::chrono::duration<double, std::milli>(now - *last - step).count()));
                frame_count = out.frame_index + 1;
            }
            last = now;
            next += step;
            // fell more than a frame behind: restart the grid instead of bursting
            if (now - next > step) next = now;
        }
    } catch (...) {
        finish(std::current_exception());
        asio::post(ioc, [this] { ioc.stop(); });
        return;
    }
    finish(nullptr);
}

Server::Server(harness::Scene scene, ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(scene), std::move(opts))) {}

Server::~Server() { stop(); }

std::uint16_t Server::port() const noexcept { return impl_->acceptor.local_endpoint().port(); }

void Server::start() {
    if (impl_->started) return;
    impl_->started = true;
    impl_->accept();
    impl_->net_thread = std::thread([this] {
        auto guard = asio::make_work_guard(impl_->ioc);
        impl_->ioc.run();
    });
    impl_->frame_thread = std::thread([this] { impl_->frame_loop(); });
}

void Server::wait() {
    std::unique_lock lock(impl_->mu);
    impl_->cv.wait(lock, [&] { return impl_->done; });
    if (impl_->error) std::rethrow_exception(impl_->error);
}

void Server::stop() {
    if (!impl_) return;
    {
        std::lock_guard lock(impl_->mu);
        impl_->stopping = true;
    }
    impl_->cv.notify_all();
    if (impl_->frame_thread.joinable()) impl_->frame_thread.join();
    impl_->ioc.stop();
    if (impl_->net_thread.joinable()) impl_->net_thread.join();
    {
        std::lock_guard lock(impl_->mu);
        impl_->done = true;
    }
    impl_->cv.notify_all();
}

JitterStats Server::jitter() const {
    std::vector<double> samples;
    {
        std::lock_guard lock(impl_->mu);
        samples = impl_->jitter_ms;
    }
    const auto t = harness::percentiles(samples);
    return {static_cast<std::int64_t>(samples.size()), t.p50, t.p95, t.p99, t.max};
}

std::int64_t Server::frames() const {
    std::lock_guard lock(impl_->mu);
    return impl_->frame_count;
}

bool Server::finished() const {
    std::lock_guard lock(impl_->mu);
    return impl_->done;
}

std::size_t Server::clients() const { return impl_->client_count.load(); }

json Server::health() const { return impl_->health(); }

} // namespace rtag::service
