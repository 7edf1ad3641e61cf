#pragma once

// Split inference over TCP. The server hosts the later part and answers
// INFER_REQUEST frames; the client runs the early part, sends Z, and decodes
// the salted output locally. Neither x nor s is ever written to the socket.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "salted/error.hpp"
#include "salted/mapping.hpp"
#include "salted/network.hpp"
#include "salted/wire.hpp"

namespace salted {

/// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses "host:port" (the last colon separates the port).
inline Endpoint parse_endpoint(std::string_view text) {
  const std::size_t colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 == text.size()) {
    throw Error(Errc::InvalidConfig, "expected host:port, got '" + std::string(text) + "'");
  }
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(std::string(text.substr(colon + 1)), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw Error(Errc::InvalidConfig, "bad port in '" + std::string(text) + "'");
  }
  if (port > 65535) throw Error(Errc::InvalidConfig, "port out of range");
  std::string host(text.substr(0, colon));
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  return {host.empty() ? "0.0.0.0" : host, static_cast<std::uint16_t>(port)};
}

namespace detail {

inline void set_timeouts(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

inline void write_all(int fd, std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(Errc::Timeout, "send timed out");
      throw Error(Errc::Io, std::string("send: ") + std::strerror(errno));
    }
    bytes = bytes.subspan(static_cast<std::size_t>(n));
  }
}

/// Reads exactly out.size() bytes. Returns false on a clean EOF before the
/// first byte; EOF mid-read is a protocol violation.
inline bool read_exact(int fd, std::span<std::uint8_t> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    const ssize_t n = ::recv(fd, out.data() + got, out.size() - got, 0);
    if (n == 0) {
      if (got == 0) return false;
      throw Error(Errc::ProtocolViolation, "connection closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(Errc::Timeout, "receive timed out");
      throw Error(Errc::Io, std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

struct AddrInfoDeleter {
  void operator()(addrinfo* p) const { ::freeaddrinfo(p); }
};

inline std::unique_ptr<addrinfo, AddrInfoDeleter> resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) {
    throw Error(passive ? Errc::Io : Errc::ConnectFailed,
                "cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  return std::unique_ptr<addrinfo, AddrInfoDeleter>(res);
}

/// Connects with a deadline.
inline Socket connect_to(const Endpoint& ep, std::chrono::milliseconds timeout) {
  auto res = resolve(ep, false);
  std::string last_error = "no addresses";
  for (addrinfo* ai = res.get(); ai; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!s.valid()) continue;
    const int flags = ::fcntl(s.fd(), F_GETFL, 0);
    ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd pfd{s.fd(), POLLOUT, 0};
      rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
      if (rc == 0) {
        last_error = "connect timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
      rc = err == 0 ? 0 : -1;
      errno = err;
    }
    if (rc != 0) {
      last_error = std::strerror(errno);
      continue;
    }
    ::fcntl(s.fd(), F_SETFL, flags);
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    set_timeouts(s.fd(), timeout);
    return s;
  }
  throw Error(Errc::ConnectFailed, ep.host + ":" + std::to_string(ep.port) + ": " + last_error);
}

/// Half-closes after a final reply and discards pending input (bounded), so
/// closing with unread bytes does not reset the connection before the peer
/// has read the reply.
inline void finish_and_drain(int fd) {
  ::shutdown(fd, SHUT_WR);
  set_timeouts(fd, std::chrono::milliseconds(500));
  std::uint8_t sink[4096];
  for (std::size_t total = 0; total < (1u << 20);) {
    const ssize_t n = ::recv(fd, sink, sizeof sink, 0);
    if (n <= 0) return;
    total += static_cast<std::size_t>(n);
  }
}

/// Reads one frame. Returns nullopt on clean EOF at a frame boundary.
inline std::optional<wire::WireMessage> read_frame(int fd, std::uint32_t max_payload) {
  std::uint8_t header[wire::kHeaderSize];
  if (!read_exact(fd, header)) return std::nullopt;
  const wire::FrameHeader h = wire::decode_header(header, max_payload);
  wire::WireMessage msg{h.type, std::vector<std::uint8_t>(h.payload_len)};
  if (h.payload_len && !read_exact(fd, msg.payload)) {
    throw Error(Errc::ProtocolViolation, "connection closed before payload");
  }
  return msg;
}

}  // namespace detail

// ------------------------------------------------------------------ server

struct ServerOptions {
  Endpoint bind;
  std::chrono::milliseconds timeout{10000};  // per-read idle limit on a session
  std::uint32_t max_payload = wire::kMaxPayload;
  std::function<void(const std::string&)> log;
};

/// Serves a later part. Sessions run on their own threads and share the
/// immutable model; the server keeps no per-request state.
class InferenceServer {
 public:
  InferenceServer(ModelPart later, ServerOptions options)
      : later_(std::move(later)), options_(std::move(options)) {
    if (later_.kind != PartKind::Later) {
      throw Error(Errc::InvalidNetwork, "server needs a later part");
    }
    validate(later_);
    expected_ = later_input_shape(later_);
  }

  ~InferenceServer() { stop(); }

  InferenceServer(const InferenceServer&) = delete;
  InferenceServer& operator=(const InferenceServer&) = delete;

  /// Binds, listens, and starts accepting in the background.
  void start() {
    auto res = detail::resolve(options_.bind, true);
    std::string last_error = "no addresses";
    for (addrinfo* ai = res.get(); ai; ai = ai->ai_next) {
      Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (!s.valid()) continue;
      int one = 1;
      ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(s.fd(), 128) != 0) {
        last_error = std::strerror(errno);
        continue;
      }
      sockaddr_storage addr{};
      socklen_t len = sizeof addr;
      ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
      port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                               : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
      listener_ = std::move(s);
      break;
    }
    if (!listener_.valid()) {
      throw Error(Errc::Io, "cannot bind " + options_.bind.host + ":" +
                                std::to_string(options_.bind.port) + ": " + last_error);
    }
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  std::uint16_t port() const noexcept { return port_; }
  bool running() const noexcept { return running_; }

  void stop() {
    if (!running_.exchange(false)) return;
    if (acceptor_.joinable()) acceptor_.join();
    listener_.reset();
    std::list<Session> sessions;
    {
      std::lock_guard lock(mutex_);
      sessions.swap(sessions_);
    }
    for (Session& s : sessions) s.socket->shutdown();
    for (Session& s : sessions) {
      if (s.thread.joinable()) s.thread.join();
    }
  }

  /// Request -> response, independent of any connection.
  wire::WireMessage handle(const wire::WireMessage& request) const {
    using wire::ErrorCode;
    if (request.type != wire::MessageType::InferRequest) {
      return wire::make_error(ErrorCode::DecodeFailure, "expected INFER_REQUEST");
    }
    Tensorf z;
    try {
      z = wire::decode_tensor(request.payload);
    } catch (const Error& e) {
      return wire::make_error(ErrorCode::DecodeFailure, e.what());
    }
    if (expected_ && z.shape() != *expected_) {
      return wire::make_error(ErrorCode::ShapeMismatch, "expected Z of shape " +
                                                            shape_str(*expected_) + ", got " +
                                                            shape_str(z.shape()));
    }
    try {
      return wire::make_response(forward_later(later_, z));
    } catch (const Error& e) {
      if (e.code() == Errc::ShapeMismatch) return wire::make_error(ErrorCode::ShapeMismatch, e.what());
      return wire::make_error(ErrorCode::Internal, e.what());
    } catch (const std::exception& e) {
      return wire::make_error(ErrorCode::Internal, e.what());
    }
  }

  std::size_t sessions_served() const noexcept { return sessions_served_; }

 private:
  struct Session {
    std::shared_ptr<Socket> socket;
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void log(const std::string& line) const {
    if (options_.log) options_.log(line);
  }

  void accept_loop() {
    while (running_) {
      pollfd pfd{listener_.fd(), POLLIN, 0};
      const int rc = ::poll(&pfd, 1, 100);
      reap();
      if (rc <= 0) continue;
      Socket conn(::accept(listener_.fd(), nullptr, nullptr));
      if (!conn.valid()) continue;
      int one = 1;
      ::setsockopt(conn.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      detail::set_timeouts(conn.fd(), options_.timeout);
      auto socket = std::make_shared<Socket>(std::move(conn));
      auto done = std::make_shared<std::atomic<bool>>(false);
      ++sessions_served_;
      std::lock_guard lock(mutex_);
      sessions_.push_back({socket, std::thread([this, socket, done] {
                             serve_session(*socket);
                             *done = true;
                           }),
                           done});
    }
  }

  void reap() {
    std::list<Session> finished;
    {
      std::lock_guard lock(mutex_);
      for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (*it->done) {
          auto next = std::next(it);
          finished.splice(finished.end(), sessions_, it);
          it = next;
        } else {
          ++it;
        }
      }
    }
    for (Session& s : finished) s.thread.join();
  }

  void serve_session(const Socket& socket) {
    const int fd = socket.fd();
    try {
      while (running_) {
        std::uint8_t header[wire::kHeaderSize];
        if (!detail::read_exact(fd, header)) return;
        wire::FrameHeader h{};
        try {
          h = wire::decode_header(header, options_.max_payload);
        } catch (const Error& e) {
          // Framing can't be trusted past a bad magic or oversized length;
          // an unknown version or type still has a usable length.
          log(std::string("session: ") + e.what());
          const bool resync = e.code() == Errc::UnsupportedVersion || e.code() == Errc::UnknownType;
          if (!resync) {
            detail::write_all(fd, wire::encode_message(wire::make_error(wire::ErrorCode::DecodeFailure, e.what())));
            detail::finish_and_drain(fd);
            return;
          }
          ByteReader r(std::span<const std::uint8_t>(header).subspan(6));
          const std::uint32_t len = r.u32();
          if (len > options_.max_payload) {
            detail::write_all(fd, wire::encode_message(wire::make_error(wire::ErrorCode::DecodeFailure, e.what())));
            detail::finish_and_drain(fd);
            return;
          }
          std::vector<std::uint8_t> skip(len);
          if (len && !detail::read_exact(fd, skip)) return;
          detail::write_all(fd, wire::encode_message(wire::make_error(wire::ErrorCode::DecodeFailure, e.what())));
          continue;
        }
        wire::WireMessage request{h.type, std::vector<std::uint8_t>(h.payload_len)};
        if (h.payload_len && !detail::read_exact(fd, request.payload)) return;
        const wire::WireMessage response = handle(request);
        if (response.type == wire::MessageType::Error) {
          log("session: error reply: " + wire::decode_error(response.payload).text);
        }
        detail::write_all(fd, wire::encode_message(response));
      }
    } catch (const std::exception& e) {
      log(std::string("session closed: ") + e.what());
    }
  }

  ModelPart later_;
  ServerOptions options_;
  std::optional<Shape> expected_;
  Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mutex_;
  std::list<Session> sessions_;
  std::atomic<std::size_t> sessions_served_{0};
};

// ------------------------------------------------------------------ client

struct ClientOptions {
  std::chrono::milliseconds timeout{10000};
  std::uint32_t max_payload = wire::kMaxPayload;
};

/// Synchronous request/response over one reused connection.
class InferenceClient {
 public:
  InferenceClient(Endpoint server, ClientOptions options = {})
      : server_(std::move(server)), options_(options),
        socket_(detail::connect_to(server_, options_.timeout)) {}

  /// Sends Z, returns the server's Y^s.
  Tensorf infer(const Tensorf& z) {
    detail::write_all(socket_.fd(), wire::encode_message(wire::make_request(z)));
    std::optional<wire::WireMessage> reply;
    try {
      reply = detail::read_frame(socket_.fd(), options_.max_payload);
    } catch (const Error& e) {
      if (e.code() == Errc::Timeout || e.code() == Errc::Io || e.code() == Errc::ProtocolViolation) throw;
      throw Error(Errc::ProtocolViolation, e.what());
    }
    if (!reply) throw Error(Errc::ProtocolViolation, "server closed the connection");
    switch (reply->type) {
      case wire::MessageType::InferResponse:
        try {
          return wire::decode_tensor(reply->payload);
        } catch (const Error& e) {
          throw Error(Errc::ProtocolViolation, e.what());
        }
      case wire::MessageType::Error: {
        wire::ErrorPayload err;
        try {
          err = wire::decode_error(reply->payload);
        } catch (const Error& e) {
          throw Error(Errc::ProtocolViolation, e.what());
        }
        throw ServerError(err.code, err.text);
      }
      default:
        throw Error(Errc::ProtocolViolation, "unexpected reply type");
    }
  }

  const Endpoint& server() const noexcept { return server_; }

 private:
  Endpoint server_;
  ClientOptions options_;
  Socket socket_;
};

struct SplitInference {
  std::size_t decoded_class = 0;
  Tensorf decoded_probs;  // true class order
  Tensorf salted_probs;   // Y^s as the server returned it
  double latency_ms = 0.0;
};

/// Client side of split inference: Z = early(x, s) leaves the process, Y^s
/// comes back, and the salt is undone locally.
inline SplitInference client_infer(const ModelPart& early, const Tensorf& x, std::size_t salt,
                                   InferenceClient& client) {
  const auto started = std::chrono::steady_clock::now();
  const Tensorf z = forward_early(early, x, salt);
  Tensorf ys = client.infer(z);
  if (ys.rank() != 1 || ys.size() != early.mapping.classes) {
    throw Error(Errc::ProtocolViolation, "server returned " + shape_str(ys.shape()) +
                                             ", expected a length-" +
                                             std::to_string(early.mapping.classes) + " vector");
  }
  SplitInference out;
  out.decoded_probs = early.mapping.unpermute_output(salt, ys);
  out.decoded_class = early.mapping.unmap_label(salt, argmax<float>(ys.values()));
  out.salted_probs = std::move(ys);
  out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return out;
}

}  // namespace salted
