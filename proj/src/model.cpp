#include "p2u/model.hpp"

#include <cmath>
#include <unordered_set>

#include "p2u/errors.hpp"

namespace p2u {
namespace {

std::size_t shape_product(const std::vector<std::uint32_t>& shape) {
    std::size_t n = 1;
    for (std::uint32_t d : shape) n *= d;
    return n;
}

bool valid_bitwidth(std::uint32_t b) {
    return b == 4 || b == 8 || b == 16 || b == 32;
}

}  // namespace

std::size_t Tensor::element_count() const { return values.size(); }

std::size_t TensorModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.values.size();
    return n;
}

const Tensor* TensorModel::find(const std::string& tensor_name) const {
    for (const auto& t : tensors)
        if (t.name == tensor_name) return &t;
    return nullptr;
}

void validate(const TensorModel& model) {
    std::unordered_set<std::string> seen;
    for (const auto& t : model.tensors) {
        if (!seen.insert(t.name).second)
            throw InvalidModelError("duplicate tensor name '" + t.name + "' in model '" +
                                    model.name + "'");
        if (t.shape.empty())
            throw InvalidModelError("tensor '" + t.name + "' has empty shape");
        for (std::uint32_t d : t.shape)
            if (d == 0) throw InvalidModelError("tensor '" + t.name + "' has a zero dimension");
        if (shape_product(t.shape) != t.values.size())
            throw InvalidModelError("tensor '" + t.name + "' shape/value-count mismatch");
        for (float v : t.values)
            if (!std::isfinite(v))
                throw InvalidModelError("tensor '" + t.name + "' contains a non-finite value");
    }
}

std::size_t QuantizedTensor::element_count() const { return qvalues.size(); }

std::size_t QuantizedModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.qvalues.size();
    return n;
}

void validate(const QuantizedModel& model) {
    if (!valid_bitwidth(model.bitwidth))
        throw InvalidModelError("unsupported bitwidth " + std::to_string(model.bitwidth));
    const std::int64_t qmax = (std::int64_t{1} << (model.bitwidth - 1)) - 1;
    std::unordered_set<std::string> seen;
    for (const auto& t : model.tensors) {
        if (!seen.insert(t.name).second)
            throw InvalidModelError("duplicate tensor name '" + t.name + "'");
        if (t.shape.empty())
            throw InvalidModelError("tensor '" + t.name + "' has empty shape");
        if (shape_product(t.shape) != t.qvalues.size())
            throw InvalidModelError("tensor '" + t.name + "' shape/code-count mismatch");
        if (!(t.scale > 0.0f) || !std::isfinite(t.scale))
            throw InvalidModelError("tensor '" + t.name + "' has non-positive scale");
        for (std::int32_t q : t.qvalues)
            if (q > qmax || q < -qmax)
                throw InvalidModelError("tensor '" + t.name + "' code outside symmetric range");
    }
}

void validate(const UpdateModel& update) {
    validate(update.delta);
    if (!valid_bitwidth(update.base_bitwidth))
        throw InvalidModelError("unsupported base bitwidth " +
                                std::to_string(update.base_bitwidth));
}

void require_same_structure(const TensorModel& a, const TensorModel& b) {
    if (a.tensors.size() != b.tensors.size())
        throw ShapeMismatchError("models have different tensor counts");
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& ta = a.tensors[i];
        const auto& tb = b.tensors[i];
        if (ta.name != tb.name)
            throw ShapeMismatchError("tensor name mismatch at index " + std::to_string(i) +
                                     ": '" + ta.name + "' vs '" + tb.name + "'");
        if (ta.shape != tb.shape)
            throw ShapeMismatchError("tensor '" + ta.name + "' shape mismatch");
    }
}

ModelDeltaNorms model_delta_norms(const TensorModel& a, const TensorModel& b) {
    require_same_structure(a, b);
    ModelDeltaNorms out;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& ta = a.tensors[i];
        const auto& tb = b.tensors[i];
        TensorDeltaNorms n;
        n.name = ta.name;
        double sq = 0.0;
        for (std::size_t k = 0; k < ta.values.size(); ++k) {
            const double d = static_cast<double>(ta.values[k]) - static_cast<double>(tb.values[k]);
            n.max_abs = std::max(n.max_abs, std::fabs(d));
            sq += d * d;
        }
        n.l2 = std::sqrt(sq);
        out.global_max_abs = std::max(out.global_max_abs, n.max_abs);
        out.tensors.push_back(std::move(n));
    }
    return out;
}

}  // namespace p2u
