#pragma once

// Context-adaptive binary arithmetic coder (HEVC-style M-coder: 64-state
// finite-state probability estimator, table-driven renormalization). All
// state transitions are integer arithmetic, so streams are bit-identical
// across platforms.

#include <cstdint>
#include <span>
#include <vector>

namespace p2u::detail {

/// Adaptive probability state for one binary context.
struct BinContext {
    std::uint8_t state = 0;  // 0..63, higher = more skewed
    std::uint8_t mps = 0;    // current most-probable symbol
};

class ArithEncoder {
public:
    explicit ArithEncoder(std::vector<std::uint8_t>& out) : out_(out) {}

    void encode_bit(BinContext& ctx, int bin);
    void encode_bypass(int bin);
    void encode_bypass_bits(std::uint32_t value, int nbits);  // MSB first

    /// Terminates the stream (terminate bin + register flush). The encoder
    /// must not be used afterwards.
    void finish();

private:
    void append(std::uint8_t byte) { out_.push_back(byte); }
    void write_out();
    void maybe_write_out() {
        if (bits_left_ < 12) write_out();
    }

    std::vector<std::uint8_t>& out_;
    std::uint32_t low_ = 0;
    std::uint32_t range_ = 510;
    int bits_left_ = 23;
    int buffered_byte_ = 0xFF;
    int num_buffered_ = 0;
};

class ArithDecoder {
public:
    explicit ArithDecoder(std::span<const std::uint8_t> payload);

    int decode_bit(BinContext& ctx);
    int decode_bypass();
    std::uint32_t decode_bypass_bits(int nbits);

    /// Consumes the terminate bin written by ArithEncoder::finish and
    /// verifies it. Throws FormatError when the payload does not end where
    /// the symbol stream says it should.
    void finish();

private:
    std::uint8_t next_byte();

    std::span<const std::uint8_t> payload_;
    std::size_t pos_ = 0;
    std::size_t overrun_ = 0;  // zero-fill slack consumed past the end
    std::uint32_t range_ = 510;
    std::uint32_t value_ = 0;
    int bits_needed_ = 0;
};

}  // namespace p2u::detail
