#include "p2u/update.hpp"

#include <cmath>

#include "p2u/errors.hpp"
#include "p2u/quant.hpp"

namespace p2u {
namespace {

TensorModel float_difference(const TensorModel& high, const TensorModel& low) {
    require_same_structure(high, low);
    TensorModel delta;
    delta.name = high.name;
    delta.tensors.reserve(high.tensors.size());
    for (std::size_t i = 0; i < high.tensors.size(); ++i) {
        Tensor t;
        t.name = high.tensors[i].name;
        t.shape = high.tensors[i].shape;
        t.values.resize(high.tensors[i].values.size());
        for (std::size_t k = 0; k < t.values.size(); ++k)
            t.values[k] = high.tensors[i].values[k] - low.tensors[i].values[k];
        delta.tensors.push_back(std::move(t));
    }
    return delta;
}

}  // namespace

UpdateModel compute_update(const TensorModel& high, const TensorModel& low,
                           std::uint32_t update_bitwidth, std::uint32_t base_bitwidth,
                           const Digest& base_checksum) {
    if (update_bitwidth != 8 && update_bitwidth != 16 && update_bitwidth != 32)
        throw InvalidModelError("update bitwidth must be 8, 16 or 32");
    UpdateModel u;
    u.delta = quantize(float_difference(high, low), QuantizationSpec{update_bitwidth});
    u.base_bitwidth = base_bitwidth;
    u.base_checksum = base_checksum;
    return u;
}

TensorModel apply_update(const TensorModel& low, const UpdateModel& update,
                         const Digest& base_digest) {
    if (update.base_checksum != base_digest)
        throw ChecksumBindingError("update was computed for a different base artifact");
    const TensorModel delta = dequantize(update.delta);
    require_same_structure(low, delta);

    TensorModel proxy;
    proxy.name = low.name;
    proxy.tensors.reserve(low.tensors.size());
    for (std::size_t i = 0; i < low.tensors.size(); ++i) {
        Tensor t;
        t.name = low.tensors[i].name;
        t.shape = low.tensors[i].shape;
        t.values.resize(low.tensors[i].values.size());
        for (std::size_t k = 0; k < t.values.size(); ++k)
            t.values[k] = low.tensors[i].values[k] + delta.tensors[i].values[k];
        proxy.tensors.push_back(std::move(t));
    }
    return proxy;
}

std::uint32_t select_update_bitwidth(const TensorModel& high, const TensorModel& low,
                                     double tolerance) {
    const ModelDeltaNorms norms = model_delta_norms(high, low);
    for (std::uint32_t b : {8u, 16u, 32u}) {
        const double qmax = static_cast<double>(symmetric_qmax(b));
        bool ok = true;
        for (const auto& t : norms.tensors) {
            if (t.max_abs / qmax / 2.0 > tolerance) {
                ok = false;
                break;
            }
        }
        if (ok) return b;
    }
    return 32;
}

}  // namespace p2u
