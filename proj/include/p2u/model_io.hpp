#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "p2u/model.hpp"

namespace p2u {

// "P2UM" container, format version 1. Byte layout in FORMATS.md; every
// multi-byte field is little-endian and the file ends with a SHA-256 digest
// over all preceding bytes.

std::vector<std::uint8_t> serialize_model(const TensorModel& model);
TensorModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const TensorModel& model, const std::filesystem::path& path);
TensorModel load_model(const std::filesystem::path& path);

}  // namespace p2u
