#pragma once

// Minimal POSIX TCP plumbing for the length-prefixed message protocol.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace p2u::detail {

/// RAII socket fd.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    Socket& operator=(Socket&& other) noexcept;
    ~Socket();

    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void close();

    void write_all(std::span<const std::uint8_t> data);
    /// Reads exactly n bytes; returns false on clean EOF at offset 0,
    /// throws IoError on mid-read EOF or socket errors.
    bool read_exact(std::span<std::uint8_t> out);

private:
    int fd_ = -1;
};

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;
};

/// Parses "host:port".
Endpoint parse_endpoint(const std::string& address);

Socket tcp_connect(const Endpoint& ep);
Socket tcp_listen(const Endpoint& ep, std::uint16_t* bound_port);
/// Blocks in accept(); returns an invalid socket once the listener closes.
Socket tcp_accept(Socket& listener);

}  // namespace p2u::detail
