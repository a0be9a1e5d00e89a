#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "p2u/model.hpp"

namespace p2u {

/// Per-tensor symmetric uniform quantization. Rounding is fixed to
/// round-half-to-even; the integer grid is q = round(w / scale) with
/// scale = max|w| / (2^(b-1) - 1) and zero-point zero.
struct QuantizationSpec {
    std::uint32_t bitwidth = 8;  // one of 4, 8, 16, 32
};

/// Largest code magnitude at a bitwidth: 2^(b-1) - 1.
std::int64_t symmetric_qmax(std::uint32_t bitwidth);

/// Round-half-to-even to the nearest integer.
std::int64_t round_half_even(double x);

QuantizedModel quantize(const TensorModel& model, QuantizationSpec spec);

/// Re-quantize onto an existing grid (one scale per tensor, in model order).
QuantizedModel quantize_with_scales(const TensorModel& model, std::uint32_t bitwidth,
                                    std::span<const float> scales);

TensorModel dequantize(const QuantizedModel& qmodel);

struct TensorQuantError {
    std::string name;
    double max_abs = 0.0;
};

/// Per-tensor max-abs error of a quantize/dequantize roundtrip.
std::vector<TensorQuantError> quantization_error(const TensorModel& model, QuantizationSpec spec);

}  // namespace p2u
