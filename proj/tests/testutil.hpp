#pragma once

// Shared fixtures and oracles for the test suites.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "p2u/model.hpp"
#include "p2u/quant.hpp"

namespace p2u::test {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

/// Random model with a handful of tensors of random shapes.
inline TensorModel random_model(std::uint64_t seed, std::size_t max_elements = 2000,
                                float value_scale = 1.0f) {
    auto gen = rng(seed);
    std::uniform_int_distribution<int> tensor_count(1, 5);
    std::uniform_real_distribution<float> value(-value_scale, value_scale);
    TensorModel m;
    m.name = "model-" + std::to_string(seed);
    const int count = tensor_count(gen);
    for (int i = 0; i < count; ++i) {
        Tensor t;
        t.name = "t" + std::to_string(i);
        std::uniform_int_distribution<std::size_t> elems(1, max_elements);
        const std::size_t n = elems(gen);
        // occasionally multi-dim
        if (n >= 6 && n % 2 == 0 && i % 2 == 0)
            t.shape = {static_cast<std::uint32_t>(n / 2), 2};
        else
            t.shape = {static_cast<std::uint32_t>(n)};
        t.values.resize(n);
        for (auto& v : t.values) v = value(gen);
        m.tensors.push_back(std::move(t));
    }
    return m;
}

/// Single-tensor model with Gaussian weights.
inline TensorModel gaussian_model(std::uint64_t seed, std::size_t elements,
                                  std::size_t tensors = 1) {
    auto gen = rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    TensorModel m;
    m.name = "gauss-" + std::to_string(seed);
    for (std::size_t i = 0; i < tensors; ++i) {
        Tensor t;
        t.name = "w" + std::to_string(i);
        t.shape = {static_cast<std::uint32_t>(elements)};
        t.values.resize(elements);
        for (auto& v : t.values) v = static_cast<float>(g(gen));
        m.tensors.push_back(std::move(t));
    }
    return m;
}

/// Random quantized model with codes drawn uniformly from the symmetric
/// range (worst case for the entropy coder).
inline QuantizedModel random_qmodel(std::uint64_t seed, std::uint32_t bitwidth,
                                    std::size_t max_elements = 2000) {
    auto gen = rng(seed);
    const std::int64_t qmax = symmetric_qmax(bitwidth);
    std::uniform_int_distribution<std::int64_t> code(-qmax, qmax);
    std::uniform_int_distribution<int> tensor_count(1, 4);
    std::uniform_real_distribution<float> scale(1e-6f, 2.0f);
    QuantizedModel m;
    m.name = "q-" + std::to_string(seed);
    m.bitwidth = bitwidth;
    const int count = tensor_count(gen);
    for (int i = 0; i < count; ++i) {
        QuantizedTensor t;
        t.name = "t" + std::to_string(i);
        std::uniform_int_distribution<std::size_t> elems(1, max_elements);
        const std::size_t n = elems(gen);
        t.shape = {static_cast<std::uint32_t>(n)};
        t.scale = scale(gen);
        t.qvalues.resize(n);
        for (auto& q : t.qvalues) q = static_cast<std::int32_t>(code(gen));
        m.tensors.push_back(std::move(t));
    }
    return m;
}

inline float ulp(float x) {
    const float ax = std::fabs(x);
    return std::nextafter(ax, std::numeric_limits<float>::infinity()) - ax;
}

/// Unique scratch path under the system temp dir; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("p2u-test-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace p2u::test
