#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace p2u {

/// SHA-256 digest. Guards containers, bitstreams and update/base binding.
using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> data);

std::string hex(const Digest& d);

}  // namespace p2u
