#include "p2u/model_io.hpp"

#include <cstring>
#include <fstream>

#include "bytes.hpp"
#include "p2u/errors.hpp"

namespace p2u {
namespace {

constexpr char kMagic[4] = {'P', '2', 'U', 'M'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_model(const TensorModel& model) {
    validate(model);
    std::vector<std::uint8_t> out;
    detail::ByteWriter w(out);
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
    w.u32(kVersion);
    w.str(model.name);
    w.u32(static_cast<std::uint32_t>(model.tensors.size()));
    for (const auto& t : model.tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (std::uint32_t d : t.shape) w.u32(d);
        for (float v : t.values) w.f32(v);
    }
    const Digest d = sha256(out);
    w.bytes(d);
    return out;
}

TensorModel deserialize_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 + 4 + sizeof(Digest)) throw TruncatedError("truncated model container");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw BadMagicError("not a P2UM model container");

    const auto body = bytes.first(bytes.size() - sizeof(Digest));
    Digest stored;
    std::memcpy(stored.data(), bytes.data() + body.size(), sizeof(Digest));
    if (sha256(body) != stored) throw DigestMismatchError("model container digest mismatch");

    detail::ByteReader r(body, "model container");
    r.take(4);  // magic
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw UnsupportedVersionError("unsupported model container version " +
                                      std::to_string(version));
    TensorModel model;
    model.name = r.str();
    const std::uint32_t count = r.u32();
    model.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t;
        t.name = r.str();
        const std::uint32_t rank = r.u32();
        if (rank > 64) throw FormatError("implausible tensor rank");
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const std::uint32_t dim = r.u32();
            t.shape.push_back(dim);
            n *= dim;
        }
        t.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) t.values[k] = r.f32();
        model.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes in model container");
    validate(model);
    return model;
}

void save_model(const TensorModel& model, const std::filesystem::path& path) {
    const auto bytes = serialize_model(model);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

TensorModel load_model(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace p2u
