#include "p2u/digest.hpp"

#include <openssl/sha.h>

#include <cstdio>

namespace p2u {

Digest sha256(std::span<const std::uint8_t> data) {
    Digest out{};
    SHA256(data.data(), data.size(), out.data());
    return out;
}

std::string hex(const Digest& d) {
    std::string s;
    s.reserve(64);
    char buf[3];
    for (std::uint8_t b : d) {
        std::snprintf(buf, sizeof buf, "%02x", b);
        s += buf;
    }
    return s;
}

}  // namespace p2u
