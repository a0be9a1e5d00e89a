#include "p2u/quant.hpp"

#include <algorithm>
#include <cmath>

#include "p2u/errors.hpp"

namespace p2u {
namespace {

void require_spec(std::uint32_t b) {
    if (b != 4 && b != 8 && b != 16 && b != 32)
        throw InvalidModelError("unsupported quantization bitwidth " + std::to_string(b));
}

float max_abs_value(const std::vector<float>& values) {
    float m = 0.0f;
    for (float v : values) m = std::max(m, std::fabs(v));
    return m;
}

QuantizedTensor quantize_tensor(const Tensor& t, std::uint32_t bitwidth) {
    const std::int64_t qmax = symmetric_qmax(bitwidth);
    QuantizedTensor q;
    q.name = t.name;
    q.shape = t.shape;
    q.qvalues.resize(t.values.size());

    const float max_abs = max_abs_value(t.values);
    if (max_abs == 0.0f) {
        q.scale = 1.0f;
        return q;  // codes already zero
    }
    q.scale = static_cast<float>(static_cast<double>(max_abs) / static_cast<double>(qmax));
    // Codes are placed against the exact max_abs/qmax grid; the stored float
    // scale only enters at dequantization time.
    const double inv = static_cast<double>(qmax) / static_cast<double>(max_abs);
    for (std::size_t i = 0; i < t.values.size(); ++i) {
        const std::int64_t code = round_half_even(static_cast<double>(t.values[i]) * inv);
        q.qvalues[i] = static_cast<std::int32_t>(std::clamp<std::int64_t>(code, -qmax, qmax));
    }
    return q;
}

}  // namespace

std::int64_t symmetric_qmax(std::uint32_t bitwidth) {
    require_spec(bitwidth);
    return (std::int64_t{1} << (bitwidth - 1)) - 1;
}

std::int64_t round_half_even(double x) {
    // nearbyint honours the default FE_TONEAREST mode, which is ties-to-even.
    return static_cast<std::int64_t>(std::nearbyint(x));
}

QuantizedModel quantize(const TensorModel& model, QuantizationSpec spec) {
    require_spec(spec.bitwidth);
    validate(model);
    QuantizedModel out;
    out.name = model.name;
    out.bitwidth = spec.bitwidth;
    out.tensors.reserve(model.tensors.size());
    for (const auto& t : model.tensors) out.tensors.push_back(quantize_tensor(t, spec.bitwidth));
    return out;
}

QuantizedModel quantize_with_scales(const TensorModel& model, std::uint32_t bitwidth,
                                    std::span<const float> scales) {
    require_spec(bitwidth);
    validate(model);
    if (scales.size() != model.tensors.size())
        throw InvalidModelError("scale count does not match tensor count");
    const std::int64_t qmax = symmetric_qmax(bitwidth);
    QuantizedModel out;
    out.name = model.name;
    out.bitwidth = bitwidth;
    for (std::size_t i = 0; i < model.tensors.size(); ++i) {
        const auto& t = model.tensors[i];
        const float scale = scales[i];
        if (!(scale > 0.0f)) throw InvalidModelError("non-positive scale");
        QuantizedTensor q;
        q.name = t.name;
        q.shape = t.shape;
        q.scale = scale;
        q.qvalues.resize(t.values.size());
        for (std::size_t k = 0; k < t.values.size(); ++k) {
            const std::int64_t code =
                round_half_even(static_cast<double>(t.values[k]) / static_cast<double>(scale));
            q.qvalues[k] = static_cast<std::int32_t>(std::clamp<std::int64_t>(code, -qmax, qmax));
        }
        out.tensors.push_back(std::move(q));
    }
    return out;
}

TensorModel dequantize(const QuantizedModel& qmodel) {
    validate(qmodel);
    TensorModel out;
    out.name = qmodel.name;
    out.tensors.reserve(qmodel.tensors.size());
    for (const auto& q : qmodel.tensors) {
        Tensor t;
        t.name = q.name;
        t.shape = q.shape;
        t.values.resize(q.qvalues.size());
        for (std::size_t i = 0; i < q.qvalues.size(); ++i)
            t.values[i] = static_cast<float>(q.qvalues[i]) * q.scale;
        out.tensors.push_back(std::move(t));
    }
    return out;
}

std::vector<TensorQuantError> quantization_error(const TensorModel& model, QuantizationSpec spec) {
    const TensorModel round_trip = dequantize(quantize(model, spec));
    const ModelDeltaNorms norms = model_delta_norms(model, round_trip);
    std::vector<TensorQuantError> out;
    out.reserve(norms.tensors.size());
    for (const auto& n : norms.tensors) out.push_back({n.name, n.max_abs});
    return out;
}

}  // namespace p2u
