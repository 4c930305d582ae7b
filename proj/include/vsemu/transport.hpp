#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vsemu/result.hpp"
#include "vsemu/wire.hpp"

// Stream transport for the wire protocol. Plain loopback TCP stands in for
// the prototype's mTLS channel; the request credential carries the caller
// identity (see protocol.md).
namespace vsemu::transport {

using Handler = std::function<wire::Response(const wire::Request&)>;

/// One request/response exchange with a service.
class Channel {
  public:
    virtual ~Channel() = default;
    virtual Result<wire::Response> roundtrip(const wire::Request& request) = 0;
};

/// Direct dispatch into a handler; used by in-process stacks and tests.
class InProcChannel final : public Channel {
  public:
    explicit InProcChannel(Handler handler) : handler_(std::move(handler)) {}

    Result<wire::Response> roundtrip(const wire::Request& request) override {
        if (!handler_) return Error{ErrorCode::transport, "no handler attached"};
        return handler_(request);
    }

  private:
    Handler handler_;
};

/// Wraps a channel and counts traffic; lets tests assert that deferred-mode
/// commands generate no shim round trips.
class SpyChannel final : public Channel {
  public:
    explicit SpyChannel(std::shared_ptr<Channel> inner) : inner_(std::move(inner)) {}

    Result<wire::Response> roundtrip(const wire::Request& request) override {
        ++round_trips_;
        return inner_->roundtrip(request);
    }

    std::size_t round_trips() const { return round_trips_; }
    void reset() { round_trips_ = 0; }

  private:
    std::shared_ptr<Channel> inner_;
    std::atomic<std::size_t> round_trips_{0};
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    std::string to_string() const { return host + ":" + std::to_string(port); }

    static Result<Endpoint> parse(const std::string& s) {
        auto colon = s.find_last_of(':');
        if (colon == std::string::npos || colon + 1 >= s.size())
            return Error{ErrorCode::malformed, "endpoint must be host:port"};
        Endpoint ep;
        ep.host = s.substr(0, colon);
        if (ep.host == "localhost") ep.host = "127.0.0.1";
        long port = std::strtol(s.c_str() + colon + 1, nullptr, 10);
        if (port < 0 || port > 65535) return Error{ErrorCode::malformed, "bad port"};
        ep.port = static_cast<std::uint16_t>(port);
        return ep;
    }
};

namespace detail {

inline bool write_all(int fd, const Bytes& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) return false;
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

/// Read exactly one frame from the stream; buffer carries leftover bytes
/// between calls.
inline Result<wire::Frame> read_frame(int fd, Bytes& buffer) {
    while (true) {
        auto decoded = wire::decode_frame(buffer);
        if (decoded.status == wire::FrameDecodeStatus::malformed)
            return Error{ErrorCode::malformed, "bad frame"};
        if (decoded.status == wire::FrameDecodeStatus::complete) {
            buffer.erase(buffer.begin(), buffer.begin() + decoded.consumed);
            return decoded.frame;
        }
        std::uint8_t chunk[4096];
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) return Error{ErrorCode::transport, "connection closed"};
        buffer.insert(buffer.end(), chunk, chunk + n);
    }
}

}  // namespace detail

/// Blocking client connection; reconnects lazily after failures so callers
/// survive a service restart between commands.
class TcpChannel final : public Channel {
  public:
    explicit TcpChannel(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
    ~TcpChannel() override { close_fd(); }

    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    Result<wire::Response> roundtrip(const wire::Request& request) override {
        auto attempt = [&]() -> Result<wire::Response> {
            if (fd_ < 0) {
                auto st = connect_now();
                if (!st.ok()) return st.error();
            }
            if (!detail::write_all(fd_, wire::encode_request_frame(request))) {
                close_fd();
                return Error{ErrorCode::transport, "send failed"};
            }
            auto frame = detail::read_frame(fd_, buffer_);
            if (!frame.ok()) {
                close_fd();
                return frame.error();
            }
            if (frame->msg_type != wire::kMsgTypeResponse)
                return Error{ErrorCode::malformed, "expected response frame"};
            return wire::decode_response(frame->body);
        };
        auto first = attempt();
        if (first.ok() || first.code() != ErrorCode::transport) return first;
        return attempt();  // one reconnect retry on a broken connection
    }

  private:
    Status connect_now() {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) return Status(ErrorCode::transport, "socket failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(endpoint_.port);
        if (inet_pton(AF_INET, endpoint_.host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd);
            return Status(ErrorCode::transport, "bad address " + endpoint_.host);
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            ::close(fd);
            return Status(ErrorCode::transport, "connect to " + endpoint_.to_string() + " failed");
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        fd_ = fd;
        buffer_.clear();
        return {};
    }

    void close_fd() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    Endpoint endpoint_;
    int fd_ = -1;
    Bytes buffer_;
};

/// Thread-per-connection frame server. Binds to host:port (port 0 picks an
/// ephemeral port, readable via bound_port()).
class TcpServer {
  public:
    TcpServer() = default;
    ~TcpServer() { stop(); }

    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    Status start(const Endpoint& endpoint, Handler handler) {
        handler_ = std::move(handler);
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) return Status(ErrorCode::transport, "socket failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(endpoint.port);
        if (inet_pton(AF_INET, endpoint.host.c_str(), &addr.sin_addr) != 1)
            return Status(ErrorCode::transport, "bad address " + endpoint.host);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            return Status(ErrorCode::transport, "bind " + endpoint.to_string() + " failed");
        if (::listen(listen_fd_, 128) != 0) return Status(ErrorCode::transport, "listen failed");

        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
        bound_port_ = ntohs(bound.sin_port);
        host_ = endpoint.host;

        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
        return {};
    }

    void stop() {
        if (!running_.exchange(false)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        {
            std::lock_guard lock(conn_mu_);
            for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
        }
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard lock(conn_mu_);
            workers.swap(conn_threads_);
        }
        for (auto& t : workers)
            if (t.joinable()) t.join();
    }

    std::uint16_t bound_port() const { return bound_port_; }
    Endpoint bound_endpoint() const { return Endpoint{host_, bound_port_}; }

  private:
    void accept_loop() {
        while (running_) {
            int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) break;
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            std::lock_guard lock(conn_mu_);
            conn_fds_.push_back(fd);
            conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
        }
    }

    void serve_connection(int fd) {
        Bytes buffer;
        while (running_) {
            auto frame = detail::read_frame(fd, buffer);
            if (!frame.ok()) {
                if (frame.code() == ErrorCode::malformed)
                    detail::write_all(fd,
                                      wire::encode_response_frame(
                                          wire::Response::failure(ErrorCode::malformed)));
                break;
            }
            wire::Response resp;
            if (frame->msg_type != wire::kMsgTypeRequest) {
                resp = wire::Response::failure(ErrorCode::malformed);
            } else {
                auto req = wire::decode_request(frame->body);
                resp = req.ok() ? handler_(*req) : wire::Response::failure(req.error().code);
            }
            if (!detail::write_all(fd, wire::encode_response_frame(resp))) break;
        }
        {
            std::lock_guard lock(conn_mu_);
            std::erase(conn_fds_, fd);
        }
        ::close(fd);
    }

    Handler handler_;
    int listen_fd_ = -1;
    std::string host_ = "127.0.0.1";
    std::uint16_t bound_port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::mutex conn_mu_;
    std::vector<int> conn_fds_;
    std::vector<std::thread> conn_threads_;
};

}  // namespace vsemu::transport
