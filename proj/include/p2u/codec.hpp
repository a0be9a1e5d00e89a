#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "p2u/digest.hpp"
#include "p2u/model.hpp"

namespace p2u {

/// Entropy-coded "P2UB" stream: self-describing header, CABAC payload,
/// SHA-256 trailer. Byte layout in FORMATS.md.
struct Bitstream {
    std::vector<std::uint8_t> bytes;

    std::uint64_t size() const { return bytes.size(); }

    bool operator==(const Bitstream&) const = default;
};

enum class PayloadKind : std::uint8_t { Model = 0, Update = 1 };

struct BitstreamTensorInfo {
    std::string name;
    std::vector<std::uint32_t> shape;
    float scale = 1.0f;
};

struct BitstreamHeader {
    std::uint32_t version = 0;
    PayloadKind kind = PayloadKind::Model;
    std::string model_id;
    std::uint32_t bitwidth = 0;
    std::uint32_t base_bitwidth = 0;  // meaningful for updates only
    Digest base_checksum{};           // meaningful for updates only
    std::vector<BitstreamTensorInfo> tensors;
    std::uint64_t payload_bytes = 0;
};

Bitstream encode(const QuantizedModel& model);
Bitstream encode(const UpdateModel& update);

using DecodedPayload = std::variant<QuantizedModel, UpdateModel>;

/// Exact inverse of encode. Verifies the trailer digest before decoding and
/// never returns silently wrong codes.
DecodedPayload decode(const Bitstream& stream);

std::uint64_t encoded_size(const QuantizedModel& model);
std::uint64_t encoded_size(const UpdateModel& update);

/// Parses and validates the header only.
BitstreamHeader peek_header(const Bitstream& stream);

/// The stream's trailer digest; also used as the base-binding checksum for
/// update requests.
Digest bitstream_digest(const Bitstream& stream);

}  // namespace p2u
