#include "arith.hpp"

#include "p2u/errors.hpp"

namespace p2u::detail {
namespace {

// Standard M-coder tables (H.264/HEVC binary arithmetic coding engine).
constexpr std::uint8_t kLpsTable[64][4] = {
    {128, 176, 208, 240}, {128, 167, 197, 227}, {128, 158, 187, 216}, {123, 150, 178, 205},
    {116, 142, 169, 195}, {111, 135, 160, 185}, {105, 128, 152, 175}, {100, 122, 144, 166},
    {95, 116, 137, 158},  {90, 110, 130, 150},  {85, 104, 123, 142},  {81, 99, 117, 135},
    {77, 94, 111, 128},   {73, 89, 105, 122},   {69, 85, 100, 116},   {66, 80, 95, 110},
    {62, 76, 90, 104},    {59, 72, 86, 99},     {56, 69, 81, 94},     {53, 65, 77, 89},
    {51, 62, 73, 85},     {48, 59, 69, 80},     {46, 56, 66, 76},     {43, 53, 63, 72},
    {41, 50, 59, 69},     {39, 48, 56, 65},     {37, 45, 54, 62},     {35, 43, 51, 59},
    {33, 41, 48, 56},     {32, 39, 46, 53},     {30, 37, 43, 50},     {29, 35, 41, 48},
    {27, 33, 39, 45},     {26, 31, 37, 43},     {24, 30, 35, 41},     {23, 28, 33, 39},
    {22, 27, 32, 37},     {21, 26, 30, 35},     {20, 24, 29, 33},     {19, 23, 27, 31},
    {18, 22, 26, 30},     {17, 21, 25, 28},     {16, 20, 23, 27},     {15, 19, 22, 25},
    {14, 18, 21, 24},     {14, 17, 20, 23},     {13, 16, 19, 22},     {12, 15, 18, 21},
    {12, 14, 17, 20},     {11, 14, 16, 19},     {11, 13, 15, 18},     {10, 12, 15, 17},
    {10, 12, 14, 16},     {9, 11, 13, 15},      {9, 11, 12, 14},      {8, 10, 12, 14},
    {8, 9, 11, 13},       {7, 9, 11, 12},       {7, 9, 10, 12},       {7, 8, 10, 11},
    {6, 8, 9, 11},        {6, 7, 9, 10},        {6, 7, 8, 9},         {2, 2, 2, 2}};

constexpr std::uint8_t kRenormTable[32] = {6, 5, 4, 4, 3, 3, 3, 3, 2, 2, 2, 2, 2, 2, 2, 2,
                                           1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};

constexpr std::uint8_t kNextStateMps[64] = {
    1,  2,  3,  4,  5,  6,  7,  8,  9,  10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22,
    23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44,
    45, 46, 47, 48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 61, 62, 62, 63};

constexpr std::uint8_t kNextStateLps[64] = {
    0,  0,  1,  2,  2,  4,  4,  5,  6,  7,  8,  9,  9,  11, 11, 12, 13, 13, 15, 15, 16, 16,
    18, 18, 19, 19, 21, 21, 22, 22, 23, 24, 24, 25, 26, 26, 27, 27, 28, 29, 29, 30, 30, 30,
    31, 32, 32, 33, 33, 33, 34, 34, 35, 35, 35, 36, 36, 36, 37, 37, 37, 38, 38, 63};

// Decoder zero-fill slack past the payload end. A well-formed stream never
// consumes more than a couple of bytes beyond what the encoder flushed.
constexpr std::size_t kMaxOverrun = 8;

}  // namespace

void ArithEncoder::write_out() {
    const int lead_byte = static_cast<int>(low_ >> (24 - bits_left_));
    bits_left_ += 8;
    low_ &= 0xFFFFFFFFu >> bits_left_;

    if (lead_byte == 0xFF) {
        ++num_buffered_;
    } else if (num_buffered_ > 0) {
        const int carry = lead_byte >> 8;
        append(static_cast<std::uint8_t>(buffered_byte_ + carry));
        buffered_byte_ = lead_byte & 0xFF;
        const std::uint8_t filler = static_cast<std::uint8_t>((0xFF + carry) & 0xFF);
        while (num_buffered_ > 1) {
            append(filler);
            --num_buffered_;
        }
    } else {
        num_buffered_ = 1;
        buffered_byte_ = lead_byte;
    }
}

void ArithEncoder::encode_bit(BinContext& ctx, int bin) {
    const std::uint32_t lps = kLpsTable[ctx.state][(range_ >> 6) - 4];
    range_ -= lps;

    if (bin != ctx.mps) {
        const int shift = kRenormTable[lps >> 3];
        low_ = (low_ + range_) << shift;
        range_ = lps << shift;
        if (ctx.state == 0) ctx.mps = 1 - ctx.mps;
        ctx.state = kNextStateLps[ctx.state];
        bits_left_ -= shift;
    } else {
        ctx.state = kNextStateMps[ctx.state];
        if (range_ >= 256) return;
        low_ <<= 1;
        range_ <<= 1;
        --bits_left_;
    }
    maybe_write_out();
}

void ArithEncoder::encode_bypass(int bin) {
    low_ <<= 1;
    if (bin) low_ += range_;
    --bits_left_;
    maybe_write_out();
}

void ArithEncoder::encode_bypass_bits(std::uint32_t value, int nbits) {
    for (int i = nbits - 1; i >= 0; --i) encode_bypass((value >> i) & 1u);
}

void ArithEncoder::finish() {
    // Terminate bin (always 1) so the decoder can verify stream end.
    range_ -= 2;
    low_ += range_;
    low_ <<= 7;
    range_ = 2 << 7;
    bits_left_ -= 7;
    maybe_write_out();

    // Register flush.
    if (low_ >> (32 - bits_left_)) {
        append(static_cast<std::uint8_t>(buffered_byte_ + 1));
        while (num_buffered_ > 1) {
            append(0x00);
            --num_buffered_;
        }
        low_ -= 1u << (32 - bits_left_);
    } else {
        if (num_buffered_ > 0) append(static_cast<std::uint8_t>(buffered_byte_));
        while (num_buffered_ > 1) {
            append(0xFF);
            --num_buffered_;
        }
    }
    int n = 32 - bits_left_;
    std::uint32_t val = low_;
    while (n % 8) {
        val <<= 1;
        ++n;
    }
    while (n > 0) {
        append(static_cast<std::uint8_t>((val >> (n - 8)) & 0xFF));
        n -= 8;
    }
}

ArithDecoder::ArithDecoder(std::span<const std::uint8_t> payload) : payload_(payload) {
    bits_needed_ = 8;
    value_ = static_cast<std::uint32_t>(next_byte()) << 8;
    bits_needed_ -= 8;
    value_ |= next_byte();
    bits_needed_ -= 8;
}

std::uint8_t ArithDecoder::next_byte() {
    if (pos_ < payload_.size()) return payload_[pos_++];
    if (++overrun_ > kMaxOverrun)
        throw PayloadExhaustedError("entropy payload exhausted before all symbols were decoded");
    return 0;
}

int ArithDecoder::decode_bit(BinContext& ctx) {
    const std::uint32_t lps = kLpsTable[ctx.state][(range_ >> 6) - 4];
    range_ -= lps;
    const std::uint32_t scaled_range = range_ << 7;

    int bit;
    if (value_ < scaled_range) {
        bit = ctx.mps;
        ctx.state = kNextStateMps[ctx.state];
        if (scaled_range < (256u << 7)) {
            range_ = scaled_range >> 6;
            value_ <<= 1;
            if (++bits_needed_ == 0) {
                bits_needed_ = -8;
                value_ |= next_byte();
            }
        }
    } else {
        value_ -= scaled_range;
        const int shift = kRenormTable[lps >> 3];
        value_ <<= shift;
        range_ = lps << shift;
        bit = 1 - ctx.mps;
        if (ctx.state == 0) ctx.mps = 1 - ctx.mps;
        ctx.state = kNextStateLps[ctx.state];
        bits_needed_ += shift;
        if (bits_needed_ >= 0) {
            value_ |= static_cast<std::uint32_t>(next_byte()) << bits_needed_;
            bits_needed_ -= 8;
        }
    }
    return bit;
}

int ArithDecoder::decode_bypass() {
    value_ <<= 1;
    if (++bits_needed_ >= 0) {
        bits_needed_ = -8;
        value_ |= next_byte();
    }
    const std::uint32_t scaled_range = range_ << 7;
    if (value_ >= scaled_range) {
        value_ -= scaled_range;
        return 1;
    }
    return 0;
}

std::uint32_t ArithDecoder::decode_bypass_bits(int nbits) {
    std::uint32_t v = 0;
    for (int i = 0; i < nbits; ++i) v = (v << 1) | static_cast<std::uint32_t>(decode_bypass());
    return v;
}

void ArithDecoder::finish() {
    range_ -= 2;
    const std::uint32_t scaled_range = range_ << 7;
    if (value_ < scaled_range)
        throw FormatError("entropy payload longer than the decoded symbol stream");
}

}  // namespace p2u::detail
