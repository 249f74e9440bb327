#pragma once

#include "biopsym/error.hpp"
#include "biopsym/frame_codec.hpp"
#include "biopsym/serialization.hpp"
#include "biopsym/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <charconv>
#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace biopsym {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ApiReply {
  unsigned status = 200;
  json body;
};

inline unsigned status_for(const std::exception& e) {
  if (dynamic_cast<const NotFound*>(&e)) return 404;
  if (dynamic_cast<const SessionClosed*>(&e)) return 409;
  if (dynamic_cast<const DepthOutOfRange*>(&e) || dynamic_cast<const EvidenceMismatch*>(&e) ||
      dynamic_cast<const PoseOutOfRange*>(&e) || dynamic_cast<const InfeasibleTarget*>(&e) ||
      dynamic_cast<const OutsideGland*>(&e))
    return 422;
  if (dynamic_cast<const IoError*>(&e)) return 500;
  return 400;
}

inline ApiReply error_reply(unsigned status, std::string message) {
  return {status, {{"error", std::move(message)}, {"status", status}}};
}

namespace detail {

inline std::vector<std::string_view> split_path(std::string_view target) {
  if (auto q = target.find('?'); q != std::string_view::npos) target = target.substr(0, q);
  std::vector<std::string_view> parts;
  while (!target.empty()) {
    if (target.front() == '/') {
      target.remove_prefix(1);
      continue;
    }
    const auto slash = target.find('/');
    parts.push_back(target.substr(0, slash));
    target = slash == std::string_view::npos ? std::string_view{} : target.substr(slash);
  }
  return parts;
}

inline std::optional<std::uint64_t> parse_id(std::string_view s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::uint64_t require_id(std::string_view s) {
  auto id = parse_id(s);
  if (!id) throw NotFound("malformed id '" + std::string(s) + "'");
  return *id;
}

inline json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  json j = json::parse(body);
  if (!j.is_object()) throw InvalidParams("request body must be an object");
  return j;
}

}  // namespace detail

/// Routes one request/response call. Transport-free so it can be exercised directly.
inline ApiReply handle_api(SimulatorService& svc, http::verb method, std::string_view target, const std::string& body) {
  using detail::require_id;
  const auto p = detail::split_path(target);
  const bool get = method == http::verb::get;
  const bool post = method == http::verb::post;
  try {
    if (p.empty()) return error_reply(404, "no such route");

    if (p[0] == "operators") {
      SessionStore& store = svc.store();
      if (p.size() == 1 && post) {
        const json b = detail::parse_body(body);
        const auto level = parse_operator_level(b.value("level", "novice"));
        if (!level) throw InvalidParams("unknown operator level");
        return {201, operator_json(store.create_operator(b.value("name", ""), *level))};
      }
      if (p.size() == 1 && get) {
        json out = json::array();
        for (const auto& op : store.list_operators()) out.push_back(operator_json(op));
        return {200, out};
      }
      if (p.size() == 2 && get) return {200, operator_json(store.get_operator(require_id(p[1])))};
      if (p.size() == 3 && get && p[2] == "stats") return {200, history_json(store.operator_history_stats(require_id(p[1])))};
      if (p.size() == 3 && get && p[2] == "recommendations") return {200, svc.recommendations(require_id(p[1]))};
    }

    if (p[0] == "phantoms") {
      if (p.size() == 1 && post) {
        const json b = detail::parse_body(body);
        const PhantomParams params = b.contains("params") ? b.at("params").get<PhantomParams>() : PhantomParams{};
        return {201, phantom_json(svc.create_phantom(params, b.value("seed", std::uint64_t{0})))};
      }
      if (p.size() == 1 && get) {
        json out = json::array();
        for (const auto& m : svc.store().list_phantoms()) out.push_back(phantom_json(m));
        return {200, out};
      }
      if (p.size() == 2 && get) return {200, phantom_json(svc.store().get_phantom(require_id(p[1])))};
    }

    if (p[0] == "sessions") {
      if (p.size() == 1 && post) {
        const json b = detail::parse_body(body);
        const std::uint64_t id = svc.open_session(b.at("operator_id").get<std::uint64_t>(), b.at("phantom_id").get<std::uint64_t>());
        return {201, session_json(svc.store().get_session(id))};
      }
      if (p.size() == 1 && get) {
        json out = json::array();
        for (const auto& s : svc.store().list_sessions()) out.push_back(session_json(s));
        return {200, out};
      }
      if (p.size() >= 2) {
        const std::uint64_t id = require_id(p[1]);
        if (p.size() == 2 && get) return {200, session_json(svc.store().get_session(id))};
        if (p.size() == 3) {
          const std::string_view action = p[2];
          if (action == "close" && post) {
            svc.close_session(id);
            return {200, session_json(svc.store().get_session(id))};
          }
          if (action == "pose" && post) {
            const json b = detail::parse_body(body);
            bool clamped = false;
            const ProbePose pose =
                svc.set_pose(id, b.at("pose").get<ProbePose>(), b.value("seq", std::uint64_t{0}), &clamped);
            return {200, {{"pose", pose}, {"clamped", clamped}}};
          }
          if (action == "fire" && post) {
            const json b = detail::parse_body(body);
            return {201, svc.fire(id, b.at("needle_depth").get<double>())};
          }
          if (action == "stats" && get) return {200, svc.stats(id)};
          if (action == "scene" && get) return {200, scene_to_json(svc.scene(id))};
          if (action == "exercise" && post) {
            const json b = detail::parse_body(body);
            const std::string what = b.value("action", "");
            if (what == "start") return {201, exercise_to_json(svc.start_exercise(id, b))};
            if (what == "submit") return {200, exercise_result_to_json(svc.submit_exercise(id, b.value("evidence", "")))};
            throw InvalidParams("exercise action must be 'start' or 'submit'");
          }
        }
      }
    }
    return error_reply(404, "no such route");
  } catch (const json::exception& e) {
    return error_reply(400, std::string("malformed request: ") + e.what());
  } catch (const Error& e) {
    return error_reply(status_for(e), e.what());
  }
}

/// Websocket stream of one session. Client messages are JSON text:
///   {"type":"subscribe","views":["probe","axial"],"width":256,"height":256}
///   {"type":"pose","seq":7,"pose":{"pitch":..,"yaw":..,"roll":..,"insertion":..}}
/// The server answers with a "hello", then per rendered view a JSON "frame" message followed by
/// the binary frame. Poses arriving while frames are in flight are coalesced; the last one wins.
class StreamConnection : public std::enable_shared_from_this<StreamConnection> {
 public:
  StreamConnection(tcp::socket&& socket, SimulatorService& svc, std::optional<std::uint64_t> session_id)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), svc_(svc), session_id_(session_id) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&StreamConnection::on_accept, shared_from_this()));
  }

 private:
  struct Outgoing {
    bool binary = false;
    std::string text;
    std::vector<std::uint8_t> bytes;
  };

  void on_accept(beast::error_code ec) {
    if (ec) return;
    json hello;
    try {
      if (!session_id_) throw NotFound("malformed session id");
      const SessionRecord rec = svc_.store().get_session(*session_id_);
      epoch_ = svc_.fire_epoch(*session_id_);
      hello = {{"type", "hello"}, {"session_id", rec.id}, {"pose", svc_.current_pose(rec.id)}, {"closed", rec.closed}};
    } catch (const Error& e) {
      terminal_ = true;
      send_text({{"type", "error"}, {"terminal", true}, {"status", status_for(e)}, {"message", e.what()}});
      return;
    }
    send_text(hello);
    do_read();
    arm_timer();
  }

  void do_read() { ws_.async_read(in_, beast::bind_front_handler(&StreamConnection::on_read, shared_from_this())); }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      timer_.cancel();
      return;
    }
    const std::string msg = beast::buffers_to_string(in_.data());
    in_.consume(in_.size());
    try {
      const json m = json::parse(msg);
      const std::string type = m.value("type", "");
      if (type == "subscribe") {
        views_.clear();
        for (const auto& v : m.value("views", json::array({"probe"}))) {
          auto view = parse_view(v.get<std::string>());
          if (!view) throw InvalidParams("unknown view");
          views_.insert(*view);
        }
        const int w = m.value("width", 256), h = m.value("height", 256);
        if (w < 2 || h < 2 || w > 4096 || h > 4096) throw BadResolution("frame resolution out of range");
        width_ = w;
        height_ = h;
        dirty_ = views_;
      } else if (type == "pose") {
        svc_.set_pose(*session_id_, m.at("pose").get<ProbePose>(), m.value("seq", std::uint64_t{0}));
        if (views_.contains(View::Probe)) dirty_.insert(View::Probe);
      } else {
        throw InvalidParams("unknown message type '" + type + "'");
      }
    } catch (const json::exception& e) {
      send_text({{"type", "error"}, {"terminal", false}, {"status", 400}, {"message", e.what()}});
    } catch (const Error& e) {
      send_text({{"type", "error"}, {"terminal", false}, {"status", status_for(e)}, {"message", e.what()}});
    }
    flush();
    do_read();
  }

  void arm_timer() {
    timer_.expires_after(std::chrono::milliseconds(50));
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      const std::uint64_t epoch = self->svc_.fire_epoch(*self->session_id_);
      if (epoch != self->epoch_) {
        self->epoch_ = epoch;
        self->dirty_.insert(self->views_.begin(), self->views_.end());
        self->flush();
      }
      self->arm_timer();
    });
  }

  /// Renders dirty views once the previous batch has been written out.
  void flush() {
    if (writing_ || dirty_.empty() || closed_) return;
    for (View v : dirty_) {
      try {
        const SliceFrame f = svc_.render(*session_id_, v, width_, height_);
        send_text(frame_metadata(f), /*start=*/false);
        Outgoing bin;
        bin.binary = true;
        bin.bytes = encode_frame({f.frame_seq, static_cast<std::uint32_t>(f.view), static_cast<std::uint32_t>(f.width),
                                  static_cast<std::uint32_t>(f.height)},
                                 f.pixels);
        queue_.push_back(std::move(bin));
      } catch (const Error& e) {
        send_text({{"type", "error"}, {"terminal", false}, {"status", status_for(e)}, {"message", e.what()}}, false);
      }
    }
    dirty_.clear();
    start_write();
  }

  void send_text(const json& j, bool start = true) {
    queue_.push_back({false, j.dump(), {}});
    if (start) start_write();
  }

  void start_write() {
    if (writing_ || queue_.empty()) return;
    writing_ = true;
    Outgoing& out = queue_.front();
    ws_.binary(out.binary);
    auto done = beast::bind_front_handler(&StreamConnection::on_write, shared_from_this());
    if (out.binary)
      ws_.async_write(net::buffer(out.bytes), std::move(done));
    else
      ws_.async_write(net::buffer(out.text), std::move(done));
  }

  void on_write(beast::error_code ec, std::size_t) {
    writing_ = false;
    queue_.pop_front();
    if (ec) {
      closed_ = true;
      timer_.cancel();
      return;
    }
    if (!queue_.empty()) {
      start_write();
      return;
    }
    if (terminal_) {
      closed_ = true;
      ws_.async_close(websocket::close_code::policy_error, [self = shared_from_this()](beast::error_code) {});
      return;
    }
    flush();
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer in_;
  SimulatorService& svc_;
  std::optional<std::uint64_t> session_id_;
  std::set<View> views_;
  std::set<View> dirty_;
  int width_ = 256;
  int height_ = 256;
  std::uint64_t epoch_ = 0;
  std::deque<Outgoing> queue_;
  bool writing_ = false;
  bool closed_ = false;
  bool terminal_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, SimulatorService& svc) : stream_(std::move(socket)), svc_(svc) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpConnection::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    const std::string_view target(req_.target().data(), req_.target().size());
    if (websocket::is_upgrade(req_)) {
      const auto p = detail::split_path(target);
      if (p.size() == 3 && p[0] == "sessions" && p[2] == "stream") {
        stream_.expires_never();
        std::make_shared<StreamConnection>(stream_.release_socket(), svc_, detail::parse_id(p[1]))->run(std::move(req_));
        return;
      }
    }
    ApiReply reply = handle_api(svc_, req_.method(), target, req_.body());
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(reply.status), req_.version());
    res->set(http::field::content_type, "application/json");
    res->keep_alive(req_.keep_alive());
    res->body() = reply.body.dump();
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  SimulatorService& svc_;
};

/// HTTP + websocket front end. Binding happens in the constructor, so an occupied port throws.
class Server {
 public:
  Server(SimulatorService& svc, const std::string& address, unsigned short port, int threads = 2)
      : svc_(svc), threads_(std::max(1, threads)), acceptor_(net::make_strand(ioc_)) {
    beast::error_code ec;
    const tcp::endpoint ep(net::ip::make_address(address, ec), port);
    if (ec) throw InvalidParams("bad listen address '" + address + "'");
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("cannot listen on " + address + ":" + std::to_string(port) + ": " + ec.message());
  }

  ~Server() { stop(); }

  tcp::endpoint endpoint() const { return acceptor_.local_endpoint(); }

  /// Serves on background threads until stop().
  void start() {
    do_accept();
    for (int i = 0; i < threads_; ++i) workers_.emplace_back([this] { ioc_.run(); });
  }

  /// Serves on the calling thread (plus extra workers) until stop().
  void run() {
    do_accept();
    for (int i = 1; i < threads_; ++i) workers_.emplace_back([this] { ioc_.run(); });
    ioc_.run();
  }

  void stop() {
    ioc_.stop();
    for (auto& t : workers_)
      if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
    workers_.clear();
  }

 private:
  void do_accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (!ec) std::make_shared<HttpConnection>(std::move(socket), svc_)->run();
      if (acceptor_.is_open()) do_accept();
    });
  }

  SimulatorService& svc_;
  int threads_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::vector<std::thread> workers_;
};

}  // namespace biopsym
