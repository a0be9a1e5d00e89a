#include "net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "p2u/errors.hpp"

namespace p2u::detail {
namespace {

[[noreturn]] void raise_errno(const std::string& what) {
    throw IoError(what + ": " + std::strerror(errno));
}

}  // namespace

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::write_all(std::span<const std::uint8_t> data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            raise_errno("send failed");
        }
        sent += static_cast<std::size_t>(n);
    }
}

bool Socket::read_exact(std::span<std::uint8_t> out) {
    std::size_t got = 0;
    while (got < out.size()) {
        const ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            raise_errno("recv failed");
        }
        if (n == 0) {
            if (got == 0) return false;
            throw IoError("connection closed mid-message");
        }
        got += static_cast<std::size_t>(n);
    }
    return true;
}

Endpoint parse_endpoint(const std::string& address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == address.size())
        throw Error("endpoint must be host:port, got '" + address + "'");
    Endpoint ep;
    ep.host = address.substr(0, colon);
    const long port = std::strtol(address.c_str() + colon + 1, nullptr, 10);
    if (port < 0 || port > 65535) throw Error("bad port in '" + address + "'");
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

Socket tcp_connect(const Endpoint& ep) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1)
        throw IoError("cannot parse host address '" + ep.host + "'");

    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) raise_errno("socket failed");
    const int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        raise_errno("connect to " + ep.host + ":" + std::to_string(ep.port) + " failed");
    return s;
}

Socket tcp_listen(const Endpoint& ep, std::uint16_t* bound_port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1)
        throw IoError("cannot parse listen address '" + ep.host + "'");

    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) raise_errno("socket failed");
    const int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        raise_errno("bind failed");
    if (::listen(s.fd(), 16) != 0) raise_errno("listen failed");

    if (bound_port) {
        sockaddr_in actual{};
        socklen_t len = sizeof actual;
        if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&actual), &len) != 0)
            raise_errno("getsockname failed");
        *bound_port = ntohs(actual.sin_port);
    }
    return s;
}

Socket tcp_accept(Socket& listener) {
    while (true) {
        const int fd = ::accept(listener.fd(), nullptr, nullptr);
        if (fd >= 0) {
            const int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Socket(fd);
        }
        if (errno == EINTR) continue;
        return Socket();  // listener closed or fatal; caller stops accepting
    }
}

}  // namespace p2u::detail
