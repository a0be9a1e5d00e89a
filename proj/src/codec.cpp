#include "p2u/codec.hpp"

#include <bit>
#include <cstring>

#include "arith.hpp"
#include "bytes.hpp"
#include "p2u/errors.hpp"

namespace p2u {
namespace {

constexpr char kMagic[4] = {'P', '2', 'U', 'B'};
constexpr std::uint32_t kVersion = 1;

// Code binarization: significance flag, sign, exponent of |q| as a
// fixed-width binary code over a context tree (one adaptive context per
// tree node, so every bin position conditions on the bits above it),
// fixed-length bypass remainder. Context indexing resets per tensor.
struct CodeContexts {
    detail::BinContext sig[2];  // conditioned on previous code's significance
    detail::BinContext sign;
    detail::BinContext exp_tree[31];  // heap-indexed nodes of the exponent code
};

// Exponent e = floor(log2(|q|)) ranges over [0, bitwidth-2].
int exponent_cap(std::uint32_t bitwidth) { return static_cast<int>(bitwidth) - 2; }

int exponent_code_width(std::uint32_t bitwidth) {
    return std::bit_width(static_cast<std::uint32_t>(exponent_cap(bitwidth)));
}

void encode_codes(detail::ArithEncoder& enc, CodeContexts& ctx, const QuantizedTensor& tensor,
                  std::uint32_t bitwidth) {
    const int width = exponent_code_width(bitwidth);
    int prev_sig = 0;
    for (std::int32_t q : tensor.qvalues) {
        const int sig = q != 0;
        enc.encode_bit(ctx.sig[prev_sig], sig);
        prev_sig = sig;
        if (!sig) continue;
        enc.encode_bit(ctx.sign, q < 0);
        const std::uint32_t m =
            static_cast<std::uint32_t>(q < 0 ? -static_cast<std::int64_t>(q) : q);
        const int e = std::bit_width(m) - 1;
        unsigned node = 1;
        for (int i = width - 1; i >= 0; --i) {
            const int bit = (e >> i) & 1;
            enc.encode_bit(ctx.exp_tree[node - 1], bit);
            node = node * 2 + static_cast<unsigned>(bit);
        }
        enc.encode_bypass_bits(m - (1u << e), e);
    }
}

void decode_codes(detail::ArithDecoder& dec, CodeContexts& ctx, QuantizedTensor& tensor,
                  std::uint32_t bitwidth) {
    const int width = exponent_code_width(bitwidth);
    const int emax = exponent_cap(bitwidth);
    int prev_sig = 0;
    for (std::int32_t& q : tensor.qvalues) {
        const int sig = dec.decode_bit(ctx.sig[prev_sig]);
        prev_sig = sig;
        if (!sig) {
            q = 0;
            continue;
        }
        const int negative = dec.decode_bit(ctx.sign);
        int e = 0;
        unsigned node = 1;
        for (int i = 0; i < width; ++i) {
            const int bit = dec.decode_bit(ctx.exp_tree[node - 1]);
            e = (e << 1) | bit;
            node = node * 2 + static_cast<unsigned>(bit);
        }
        if (e > emax) throw FormatError("malformed payload: exponent out of range");
        const std::uint32_t m = (1u << e) + dec.decode_bypass_bits(e);
        q = negative ? static_cast<std::int32_t>(-static_cast<std::int64_t>(m))
                     : static_cast<std::int32_t>(m);
    }
}

void write_header(detail::ByteWriter& w, const QuantizedModel& model, PayloadKind kind,
                  std::uint32_t base_bitwidth, const Digest& base_checksum) {
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
    w.u32(kVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    w.u8(static_cast<std::uint8_t>(model.bitwidth));
    if (kind == PayloadKind::Update) {
        w.u8(static_cast<std::uint8_t>(base_bitwidth));
        w.bytes(base_checksum);
    }
    w.str(model.name);
    w.u32(static_cast<std::uint32_t>(model.tensors.size()));
    for (const auto& t : model.tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (std::uint32_t d : t.shape) w.u32(d);
        w.f32(t.scale);
    }
}

Bitstream encode_impl(const QuantizedModel& model, PayloadKind kind, std::uint32_t base_bitwidth,
                      const Digest& base_checksum) {
    validate(model);
    Bitstream out;
    detail::ByteWriter w(out.bytes);
    write_header(w, model, kind, base_bitwidth, base_checksum);

    std::vector<std::uint8_t> payload;
    if (!model.tensors.empty()) {
        detail::ArithEncoder enc(payload);
        CodeContexts ctx;
        for (const auto& t : model.tensors) encode_codes(enc, ctx, t, model.bitwidth);
        enc.finish();
    }
    w.u64(payload.size());
    w.bytes(payload);
    w.bytes(sha256(out.bytes));
    return out;
}

struct ParsedHeader {
    BitstreamHeader header;
    std::size_t payload_offset = 0;
};

ParsedHeader parse_header(const Bitstream& stream) {
    const auto& bytes = stream.bytes;
    if (bytes.size() < 4) throw TruncatedError("truncated bitstream");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagicError("not a P2UB bitstream");

    detail::ByteReader r(bytes, "bitstream header");
    r.take(4);
    ParsedHeader out;
    auto& h = out.header;
    h.version = r.u32();
    if (h.version != kVersion)
        throw UnsupportedVersionError("unsupported bitstream version " +
                                      std::to_string(h.version));
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw FormatError("malformed header: unknown payload kind");
    h.kind = static_cast<PayloadKind>(kind);
    h.bitwidth = r.u8();
    if (h.bitwidth != 4 && h.bitwidth != 8 && h.bitwidth != 16 && h.bitwidth != 32)
        throw FormatError("malformed header: bad bitwidth");
    if (h.kind == PayloadKind::Update) {
        h.base_bitwidth = r.u8();
        auto d = r.take(sizeof(Digest));
        std::memcpy(h.base_checksum.data(), d.data(), sizeof(Digest));
    }
    h.model_id = r.str();
    const std::uint32_t count = r.u32();
    if (count > (1u << 24)) throw FormatError("malformed header: implausible tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        BitstreamTensorInfo t;
        t.name = r.str();
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 64) throw FormatError("malformed header: bad tensor rank");
        for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u32());
        t.scale = r.f32();
        h.tensors.push_back(std::move(t));
    }
    h.payload_bytes = r.u64();
    out.payload_offset = r.position();
    return out;
}

}  // namespace

Bitstream encode(const QuantizedModel& model) {
    return encode_impl(model, PayloadKind::Model, 0, Digest{});
}

Bitstream encode(const UpdateModel& update) {
    validate(update);
    return encode_impl(update.delta, PayloadKind::Update, update.base_bitwidth,
                       update.base_checksum);
}

BitstreamHeader peek_header(const Bitstream& stream) { return parse_header(stream).header; }

Digest bitstream_digest(const Bitstream& stream) {
    if (stream.bytes.size() < sizeof(Digest)) throw TruncatedError("truncated bitstream");
    Digest d;
    std::memcpy(d.data(), stream.bytes.data() + stream.bytes.size() - sizeof(Digest),
                sizeof(Digest));
    return d;
}

DecodedPayload decode(const Bitstream& stream) {
    const ParsedHeader parsed = parse_header(stream);
    const auto& h = parsed.header;

    const std::size_t body_size = parsed.payload_offset + h.payload_bytes;
    if (stream.bytes.size() < body_size + sizeof(Digest))
        throw TruncatedError("bitstream shorter than its declared payload");
    if (stream.bytes.size() > body_size + sizeof(Digest))
        throw FormatError("trailing bytes after bitstream digest");

    const auto body = std::span(stream.bytes).first(body_size);
    Digest stored;
    std::memcpy(stored.data(), stream.bytes.data() + body_size, sizeof(Digest));
    if (sha256(body) != stored) throw DigestMismatchError("bitstream digest mismatch");

    QuantizedModel model;
    model.name = h.model_id;
    model.bitwidth = h.bitwidth;
    for (const auto& info : h.tensors) {
        QuantizedTensor t;
        t.name = info.name;
        t.shape = info.shape;
        t.scale = info.scale;
        std::size_t n = 1;
        for (std::uint32_t d : info.shape) n *= d;
        t.qvalues.resize(n);
        model.tensors.push_back(std::move(t));
    }

    if (!model.tensors.empty()) {
        detail::ArithDecoder dec(std::span(stream.bytes).subspan(parsed.payload_offset,
                                                                 h.payload_bytes));
        CodeContexts ctx;
        for (auto& t : model.tensors) decode_codes(dec, ctx, t, model.bitwidth);
        dec.finish();
    } else if (h.payload_bytes != 0) {
        throw FormatError("non-empty payload for an empty model");
    }
    validate(model);

    if (h.kind == PayloadKind::Update) {
        UpdateModel u;
        u.delta = std::move(model);
        u.base_bitwidth = h.base_bitwidth;
        u.base_checksum = h.base_checksum;
        validate(u);
        return u;
    }
    return model;
}

std::uint64_t encoded_size(const QuantizedModel& model) { return encode(model).size(); }

std::uint64_t encoded_size(const UpdateModel& update) { return encode(update).size(); }

}  // namespace p2u
