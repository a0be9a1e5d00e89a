#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "p2u/digest.hpp"

namespace p2u {

/// One named float32 tensor, row-major.
struct Tensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> values;

    std::size_t element_count() const;

    bool operator==(const Tensor&) const = default;
};

/// Ordered collection of float tensors; the unit of distribution.
/// Immutable by convention once built: every library operation takes it
/// by const reference and returns fresh models.
struct TensorModel {
    std::string name;
    std::vector<Tensor> tensors;

    std::size_t parameter_count() const;
    const Tensor* find(const std::string& tensor_name) const;

    bool operator==(const TensorModel&) const = default;
};

/// Throws InvalidModelError unless tensor names are unique, every tensor's
/// shape product matches its value count, and all values are finite.
void validate(const TensorModel& model);

/// Integer codes for one tensor plus the per-tensor scale. Codes live in the
/// symmetric range +/-(2^(bitwidth-1) - 1); the most negative code is unused.
struct QuantizedTensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<std::int32_t> qvalues;
    float scale = 1.0f;

    std::size_t element_count() const;

    bool operator==(const QuantizedTensor&) const = default;
};

struct QuantizedModel {
    std::string name;
    std::uint32_t bitwidth = 8;
    std::vector<QuantizedTensor> tensors;

    std::size_t parameter_count() const;

    bool operator==(const QuantizedModel&) const = default;
};

/// Throws InvalidModelError on bad bitwidth, out-of-range codes or
/// non-positive scale.
void validate(const QuantizedModel& model);

/// Quantized elementwise difference between a high- and a low-precision
/// model, bound to the exact base bitstream it patches.
struct UpdateModel {
    QuantizedModel delta;            // codes at the update bitwidth, own scales
    std::uint32_t base_bitwidth = 8; // bitwidth of the low-precision model
    Digest base_checksum{};          // digest of the base bitstream

    bool operator==(const UpdateModel&) const = default;
};

void validate(const UpdateModel& update);

/// Per-artifact entry of a server-side model listing.
struct ManifestEntry {
    std::uint64_t encoded_bytes = 0;
    Digest checksum{};

    bool operator==(const ManifestEntry&) const = default;
};

struct ModelManifest {
    std::string model_id;
    std::map<std::uint32_t, ManifestEntry> artifacts;  // keyed by bitwidth

    bool operator==(const ModelManifest&) const = default;
};

/// Elementwise difference statistics between two structurally equal models.
struct TensorDeltaNorms {
    std::string name;
    double max_abs = 0.0;
    double l2 = 0.0;
};

struct ModelDeltaNorms {
    std::vector<TensorDeltaNorms> tensors;
    double global_max_abs = 0.0;
};

/// Throws ShapeMismatchError unless a and b have identical tensor
/// names/shapes in identical order.
ModelDeltaNorms model_delta_norms(const TensorModel& a, const TensorModel& b);

/// Same-structure check used by several modules; throws ShapeMismatchError.
void require_same_structure(const TensorModel& a, const TensorModel& b);

}  // namespace p2u
