#pragma once

// Local render service:
//   GET  /healthz      -> 200 "ok"
//   GET  /avatar/meta  -> JSON {D, uv_dims, expression_count, default_camera, ...}
//   POST /render       -> PNG bytes for a JSON pose (400 bad pose, 500 render failure)
//   WS   /stream       -> client sends poses, server replies with PNG frames;
//                         only the newest pending pose is rendered.

#include <atomic>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"

#include "uvavatar/error.hpp"
#include "uvavatar/image.hpp"
#include "uvavatar/runtime.hpp"

namespace uvavatar {

struct ServiceOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  unsigned io_threads = 1;
  unsigned render_workers = 2;
  RenderConfig render;
};

/// Renders a pose to PNG bytes; shared by the service and the CLI so both
/// paths produce identical output.
inline std::vector<std::uint8_t> render_pose_png(const AvatarRuntime& runtime, const PoseRequest& pose,
                                                 const RenderConfig& cfg = {}) {
  return encode_png(runtime.animate(pose, cfg).image);
}

namespace service_detail {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct Shared {
  std::shared_ptr<const AvatarRuntime> runtime;
  RenderConfig render;
  asio::thread_pool* pool = nullptr;
};

/// Outcome of rendering one pose off the I/O threads.
struct RenderResult {
  int status = 200;
  std::string error;
  std::vector<std::uint8_t> png;
};

inline RenderResult render_json_pose(const Shared& shared, const std::string& body) {
  RenderResult r;
  PoseRequest pose;
  try {
    pose = pose_from_json(nlohmann::json::parse(body));
    // Validate shape-level constraints up front so they map to 400.
    shared.runtime->expression(pose);
    shared.runtime->camera(pose).validate();
  } catch (const nlohmann::json::exception& e) {
    return {400, std::string("malformed pose: ") + e.what(), {}};
  } catch (const ConfigError& e) {
    return {400, e.what(), {}};
  }
  try {
    r.png = render_pose_png(*shared.runtime, pose, shared.render);
  } catch (const std::exception& e) {
    return {500, std::string("render failed: ") + e.what(), {}};
  }
  return r;
}

inline std::string error_json(const std::string& msg) { return nlohmann::json{{"error", msg}}.dump(); }

class WebSocketSession : public std::enable_shared_from_this<WebSocketSession> {
 public:
  WebSocketSession(tcp::socket&& socket, std::shared_ptr<Shared> shared)
      : ws_(std::move(socket)), shared_(std::move(shared)) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WebSocketSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    read();
  }

  void read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WebSocketSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;  // closed or failed; pending work finishes and drops its reference
    pending_ = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    if (!rendering_) start_render();
    read();
  }

  // Coalescing: one render in flight; newer poses replace the pending one.
  void start_render() {
    if (!pending_) return;
    rendering_ = true;
    std::string body = std::move(*pending_);
    pending_.reset();
    asio::post(*shared_->pool, [self = shared_from_this(), body = std::move(body)] {
      RenderResult r = render_json_pose(*self->shared_, body);
      asio::post(self->ws_.get_executor(), [self, r = std::move(r)]() mutable { self->send(std::move(r)); });
    });
  }

  void send(RenderResult r) {
    if (r.status == 200) {
      out_.emplace_back(std::move(r.png));
      binary_.push_back(true);
    } else {
      const std::string msg = error_json(r.error);
      out_.emplace_back(msg.begin(), msg.end());
      binary_.push_back(false);
    }
    if (!writing_) write_next();
  }

  void write_next() {
    if (out_.empty()) {
      writing_ = false;
      rendering_ = false;
      start_render();
      return;
    }
    writing_ = true;
    ws_.binary(binary_.front());
    ws_.async_write(asio::buffer(out_.front()), beast::bind_front_handler(&WebSocketSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    out_.pop_front();
    binary_.pop_front();
    if (ec) {
      writing_ = false;
      return;
    }
    write_next();
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  std::optional<std::string> pending_;
  std::deque<std::vector<std::uint8_t>> out_;
  std::deque<bool> binary_;
  bool rendering_ = false;
  bool writing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void run() {
    asio::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::read, shared_from_this()));
  }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (target != "/stream") return reply(http::status::not_found, "text/plain", "no such stream\n");
      stream_.expires_never();
      std::make_shared<WebSocketSession>(stream_.release_socket(), shared_)->run(std::move(req_));
      return;
    }
    if (target == "/healthz") {
      if (req_.method() != http::verb::get) return reply(http::status::method_not_allowed, "text/plain", "GET only\n");
      return reply(http::status::ok, "text/plain", "ok");
    }
    if (target == "/avatar/meta") {
      if (req_.method() != http::verb::get) return reply(http::status::method_not_allowed, "text/plain", "GET only\n");
      return reply(http::status::ok, "application/json", shared_->runtime->meta().dump());
    }
    if (target == "/render") {
      if (req_.method() != http::verb::post) return reply(http::status::method_not_allowed, "text/plain", "POST only\n");
      asio::post(*shared_->pool, [self = shared_from_this(), body = req_.body()] {
        RenderResult r = render_json_pose(*self->shared_, body);
        asio::post(self->stream_.get_executor(), [self, r = std::move(r)] {
          if (r.status == 200)
            self->reply(http::status::ok, "image/png", std::string(r.png.begin(), r.png.end()));
          else
            self->reply(static_cast<http::status>(r.status), "application/json", error_json(r.error));
        });
      });
      return;
    }
    reply(http::status::not_found, "text/plain", "not found\n");
  }

  void reply(http::status status, const char* content_type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "uvavatar");
    res->set(http::field::content_type, content_type);
    res->keep_alive(req_.keep_alive());
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace service_detail

/// Serves one immutable avatar. start() binds and returns the bound port;
/// the destructor stops the service.
class AvatarService {
 public:
  AvatarService(std::shared_ptr<const AvatarRuntime> runtime, ServiceOptions options)
      : options_(std::move(options)), pool_(std::max(1u, options_.render_workers)), acceptor_(ioc_) {
    shared_ = std::make_shared<service_detail::Shared>();
    shared_->runtime = std::move(runtime);
    shared_->render = options_.render;
    shared_->pool = &pool_;
  }

  AvatarService(const AvatarService&) = delete;
  AvatarService& operator=(const AvatarService&) = delete;
  ~AvatarService() { stop(); }

  unsigned short start() {
    namespace asio = service_detail::asio;
    using service_detail::tcp;
    boost::system::error_code ec;
    const auto address = asio::ip::make_address(options_.address, ec);
    if (ec) throw ConfigError("service: bad address '" + options_.address + "'");
    const tcp::endpoint endpoint(address, options_.port);
    acceptor_.open(endpoint.protocol(), ec);
    if (!ec) acceptor_.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(endpoint, ec);
    if (!ec) acceptor_.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("service: cannot listen on " + options_.address + ":" + std::to_string(options_.port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
    accept();
    for (unsigned i = 0; i < std::max(1u, options_.io_threads); ++i) threads_.emplace_back([this] { ioc_.run(); });
    return port_;
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    ioc_.stop();
    threads_.clear();  // joins
    pool_.stop();
    pool_.join();
  }

  unsigned short port() const { return port_; }

 private:
  void accept() {
    acceptor_.async_accept(service_detail::asio::make_strand(ioc_),
                           [this](boost::system::error_code ec, service_detail::tcp::socket socket) {
                             if (!ec) std::make_shared<service_detail::HttpSession>(std::move(socket), shared_)->run();
                             if (acceptor_.is_open()) accept();
                           });
  }

  ServiceOptions options_;
  service_detail::asio::io_context ioc_;
  service_detail::asio::thread_pool pool_;
  service_detail::tcp::acceptor acceptor_;
  std::shared_ptr<service_detail::Shared> shared_;
  std::vector<std::jthread> threads_;
  std::atomic<bool> stopped_{false};
  unsigned short port_ = 0;
};

}  // namespace uvavatar
