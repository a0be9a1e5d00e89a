#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

namespace p2u {

/// Analytic channel model: serialization at a fixed bandwidth plus one
/// propagation delay per transfer. No loss, jitter or congestion.
struct ChannelConfig {
    std::uint64_t bandwidth_bps = 100'000'000;  // 100 Mbps
    std::uint64_t delay_ns = 10'000'000;        // 10 ms propagation delay C

    double delay_seconds() const;
};

/// bytes*8 / bandwidth + C, evaluated as one exact integer rational before
/// the final conversion to double.
double channel_time(std::uint64_t bytes, const ChannelConfig& cfg);

/// Channel time of a sequenced two-phase delivery: both serializations plus
/// exactly 2C, again as a single exact rational.
double sequenced_channel_time(std::uint64_t base_bytes, std::uint64_t update_bytes,
                              const ChannelConfig& cfg);

/// Extra propagation delay of sequenced two-phase delivery over a direct
/// transfer: 2C - C = C.
double p2u_delay_overhead(const ChannelConfig& cfg);

enum class DeliveryMode { Sequenced, Parallel };

/// Timing and size ledger for one phase of a delivery.
struct PhaseMetrics {
    std::uint64_t bytes = 0;
    double encode_s = 0.0;
    double channel_s = 0.0;
    double decode_s = 0.0;
    double dequantize_s = 0.0;

    double prepare_time() const { return encode_s + channel_s + decode_s + dequantize_s; }
};

struct TransferReport {
    std::string model_id;
    std::uint32_t base_bitwidth = 0;
    std::uint32_t update_bitwidth = 0;
    bool has_update = false;

    PhaseMetrics base;
    PhaseMetrics update;
    double apply_s = 0.0;

    // Derived; filled by finalize_report, re-checked by validate_report.
    double startup_latency_low_s = 0.0;
    double startup_latency_proxy_s = 0.0;
    std::uint64_t total_bytes = 0;
    std::uint64_t max_phase_bytes = 0;
};

/// Computes the derived fields from the phase fields.
void finalize_report(TransferReport& report);

/// Throws Error unless every derived field equals its recomputation.
void validate_report(const TransferReport& report);

/// Peak bandwidth proxy: the larger phase for sequenced delivery, the sum of
/// both phases when they are sent in parallel.
std::uint64_t bandwidth_requirement(const TransferReport& report, DeliveryMode mode);

/// Median wall time of fn over an odd number of repetitions (monotonic clock).
double median_seconds(int repetitions, const std::function<void()>& fn);

/// Append-only collection of reports, safe for concurrent writers.
class MetricsSink {
public:
    void append(TransferReport report);
    std::vector<TransferReport> snapshot() const;

private:
    mutable std::mutex mu_;
    std::vector<TransferReport> reports_;
};

std::string report_csv_header();
std::string report_csv_row(const TransferReport& report);

}  // namespace p2u
