#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "p2u/errors.hpp"
#include "p2u/model.hpp"
#include "p2u/model_io.hpp"
#include "p2u/quant.hpp"
#include "testutil.hpp"

using namespace p2u;

namespace {

TensorModel tiny_model() {
    TensorModel m;
    m.name = "tiny";
    m.tensors.push_back({"w", {2}, {0.0f, 0.0f}});
    return m;
}

}  // namespace

TEST_CASE("roundtrip of a tiny model is exact") {
    test::TempDir dir("store");
    const auto path = dir.path() / "m.p2um";
    const auto m = tiny_model();
    save_model(m, path);
    CHECK(load_model(path) == m);
}

TEST_CASE("tensor table preserves insertion order") {
    TensorModel m;
    m.name = "ordered";
    m.tensors.push_back({"b", {3}, {1.0f, 2.0f, 3.0f}});
    m.tensors.push_back({"a", {1}, {4.0f}});
    const auto bytes = serialize_model(m);
    const auto back = deserialize_model(bytes);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].name == "b");
    CHECK(back.tensors[1].name == "a");
}

TEST_CASE("randomized models roundtrip bit-exactly") {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        const auto m = test::random_model(seed);
        CHECK(deserialize_model(serialize_model(m)) == m);
    }
}

TEST_CASE("large tensor-count model roundtrips") {
    TensorModel m;
    m.name = "many";
    for (int i = 0; i < 1000; ++i) {
        m.tensors.push_back(
            {"t" + std::to_string(i), {2}, {static_cast<float>(i), static_cast<float>(-i)}});
    }
    CHECK(deserialize_model(serialize_model(m)) == m);
}

TEST_CASE("container bytes are deterministic") {
    const auto m = test::random_model(7);
    CHECK(serialize_model(m) == serialize_model(m));
}

TEST_CASE("single-byte corruption anywhere in the payload is detected") {
    auto bytes = serialize_model(test::random_model(3, 50));
    // flip a byte in the values region (past magic+version)
    for (std::size_t pos : {std::size_t{9}, bytes.size() / 2, bytes.size() - 40}) {
        auto corrupted = bytes;
        corrupted[pos] ^= 0x01;
        CHECK_THROWS_AS((void)deserialize_model(corrupted), DigestMismatchError);
    }
}

TEST_CASE("distinct load errors") {
    test::TempDir dir("store-err");

    SUBCASE("empty file is truncated") {
        const auto path = dir.path() / "empty.p2um";
        std::ofstream(path).close();
        CHECK_THROWS_AS((void)load_model(path), TruncatedError);
    }
    SUBCASE("bad magic") {
        auto bytes = serialize_model(tiny_model());
        bytes[0] = 'X';
        CHECK_THROWS_AS((void)deserialize_model(bytes), BadMagicError);
    }
    SUBCASE("unsupported version") {
        auto bytes = serialize_model(tiny_model());
        bytes[4] = 99;
        // version is covered by the digest, so recompute the trailer
        std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 32);
        const auto digest = sha256(body);
        std::copy(digest.begin(), digest.end(), bytes.end() - 32);
        CHECK_THROWS_AS((void)deserialize_model(bytes), UnsupportedVersionError);
    }
    SUBCASE("truncated file") {
        auto bytes = serialize_model(tiny_model());
        bytes.resize(bytes.size() - 7);
        CHECK_THROWS_AS((void)deserialize_model(bytes), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS((void)load_model(dir.path() / "nope.p2um"), IoError);
    }
}

TEST_CASE("non-finite values are rejected before write") {
    TensorModel m;
    m.name = "bad";
    m.tensors.push_back({"w", {1}, {std::numeric_limits<float>::quiet_NaN()}});
    CHECK_THROWS_AS((void)serialize_model(m), InvalidModelError);
}

TEST_CASE("model invariants are validated") {
    TensorModel dup;
    dup.name = "dup";
    dup.tensors.push_back({"w", {1}, {1.0f}});
    dup.tensors.push_back({"w", {1}, {2.0f}});
    CHECK_THROWS_AS(validate(dup), InvalidModelError);

    TensorModel mismatch;
    mismatch.name = "mismatch";
    mismatch.tensors.push_back({"w", {3}, {1.0f}});
    CHECK_THROWS_AS(validate(mismatch), InvalidModelError);
}

TEST_CASE("model_delta_norms basics") {
    SUBCASE("identical models have zero norms") {
        const auto m = test::random_model(5);
        const auto norms = model_delta_norms(m, m);
        CHECK(norms.global_max_abs == 0.0);
        for (const auto& t : norms.tensors) {
            CHECK(t.max_abs == 0.0);
            CHECK(t.l2 == 0.0);
        }
    }
    SUBCASE("single element difference") {
        TensorModel a, b;
        a.name = b.name = "s";
        a.tensors.push_back({"w", {1}, {1.0f}});
        b.tensors.push_back({"w", {1}, {0.5f}});
        const auto norms = model_delta_norms(a, b);
        CHECK(norms.tensors[0].max_abs == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(norms.tensors[0].l2 == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("shape mismatch is an error") {
        TensorModel a, b;
        a.name = b.name = "s";
        a.tensors.push_back({"w", {1}, {1.0f}});
        b.tensors.push_back({"w", {2}, {1.0f, 2.0f}});
        CHECK_THROWS_AS((void)model_delta_norms(a, b), ShapeMismatchError);
    }
}

TEST_CASE("8-bit roundtrip delta stays within half a quantization step") {
    // brute-force bound check per element against the per-tensor scale
    for (std::uint64_t seed = 50; seed < 58; ++seed) {
        const auto w = test::random_model(seed, 500);
        const auto q = quantize(w, {8});
        const auto norms = model_delta_norms(w, dequantize(q));
        for (std::size_t i = 0; i < norms.tensors.size(); ++i) {
            const double bound = 0.5 * q.tensors[i].scale;
            CHECK(norms.tensors[i].max_abs <= bound + 2.0 * test::ulp(q.tensors[i].scale));
        }
    }
}
