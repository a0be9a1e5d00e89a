#pragma once

#include <cstdint>

#include "p2u/digest.hpp"
#include "p2u/model.hpp"

namespace p2u {

/// Difference high - low in the float domain, quantized at update_bitwidth
/// with its own per-tensor max-abs scales. base_checksum binds the update to
/// the exact base bitstream the low model was decoded from.
UpdateModel compute_update(const TensorModel& high, const TensorModel& low,
                           std::uint32_t update_bitwidth, std::uint32_t base_bitwidth,
                           const Digest& base_checksum);

/// Reconstructs the proxy W' = low + dequantize(delta). base_digest is the
/// digest of the base artifact actually in use; on mismatch the update is
/// rejected whole (ChecksumBindingError) and nothing is applied.
TensorModel apply_update(const TensorModel& low, const UpdateModel& update,
                         const Digest& base_digest);

/// Smallest bitwidth in {8, 16, 32} whose worst-case reconstruction error
/// |delta|_max / (2^(b-1) - 1) / 2 is within tolerance for every tensor;
/// 32 when none smaller qualifies.
std::uint32_t select_update_bitwidth(const TensorModel& high, const TensorModel& low,
                                     double tolerance);

}  // namespace p2u
