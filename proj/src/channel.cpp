#include "p2u/channel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "p2u/errors.hpp"

namespace p2u {
namespace {

constexpr std::uint64_t kNsPerSecond = 1'000'000'000;

using u128 = unsigned __int128;

double rational_seconds(u128 numerator, u128 denominator) {
    // Both operands are exact integers; x87 long double carries a 64-bit
    // mantissa, enough for every desk-scale size/bandwidth combination.
    return static_cast<double>(static_cast<long double>(numerator) /
                               static_cast<long double>(denominator));
}

void require_valid(const ChannelConfig& cfg) {
    if (cfg.bandwidth_bps == 0) throw Error("channel bandwidth must be positive");
}

}  // namespace

double ChannelConfig::delay_seconds() const {
    return rational_seconds(delay_ns, kNsPerSecond);
}

double channel_time(std::uint64_t bytes, const ChannelConfig& cfg) {
    require_valid(cfg);
    // bytes*8/bw + C  ==  (bits*1e9 + delay_ns*bw) / (bw*1e9)
    const u128 bits = u128{bytes} * 8;
    const u128 num = bits * kNsPerSecond + u128{cfg.delay_ns} * cfg.bandwidth_bps;
    const u128 den = u128{cfg.bandwidth_bps} * kNsPerSecond;
    return rational_seconds(num, den);
}

double sequenced_channel_time(std::uint64_t base_bytes, std::uint64_t update_bytes,
                              const ChannelConfig& cfg) {
    require_valid(cfg);
    const u128 bits = (u128{base_bytes} + u128{update_bytes}) * 8;
    const u128 num = bits * kNsPerSecond + u128{2} * cfg.delay_ns * cfg.bandwidth_bps;
    const u128 den = u128{cfg.bandwidth_bps} * kNsPerSecond;
    return rational_seconds(num, den);
}

double p2u_delay_overhead(const ChannelConfig& cfg) { return cfg.delay_seconds(); }

void finalize_report(TransferReport& r) {
    r.startup_latency_low_s = r.base.prepare_time();
    r.startup_latency_proxy_s =
        r.has_update ? r.startup_latency_low_s + r.update.encode_s + r.update.channel_s +
                           r.update.decode_s + r.apply_s
                     : r.startup_latency_low_s;
    r.total_bytes = r.base.bytes + (r.has_update ? r.update.bytes : 0);
    r.max_phase_bytes = r.has_update ? std::max(r.base.bytes, r.update.bytes) : r.base.bytes;
}

void validate_report(const TransferReport& r) {
    TransferReport check = r;
    finalize_report(check);
    const bool ok = check.startup_latency_low_s == r.startup_latency_low_s &&
                    check.startup_latency_proxy_s == r.startup_latency_proxy_s &&
                    check.total_bytes == r.total_bytes &&
                    check.max_phase_bytes == r.max_phase_bytes;
    if (!ok) throw Error("transfer report derived fields are inconsistent");
}

std::uint64_t bandwidth_requirement(const TransferReport& r, DeliveryMode mode) {
    return mode == DeliveryMode::Sequenced ? r.max_phase_bytes : r.total_bytes;
}

double median_seconds(int repetitions, const std::function<void()>& fn) {
    if (repetitions < 1) repetitions = 1;
    std::vector<double> samples;
    samples.reserve(repetitions);
    for (int i = 0; i < repetitions; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

void MetricsSink::append(TransferReport report) {
    std::lock_guard lock(mu_);
    reports_.push_back(std::move(report));
}

std::vector<TransferReport> MetricsSink::snapshot() const {
    std::lock_guard lock(mu_);
    return reports_;
}

std::string report_csv_header() {
    return "model_id,base_bitwidth,update_bitwidth,has_update,"
           "base_bytes,base_encode_s,base_channel_s,base_decode_s,base_dequantize_s,"
           "update_bytes,update_encode_s,update_channel_s,update_decode_s,apply_s,"
           "startup_latency_low_s,startup_latency_proxy_s,total_bytes,max_phase_bytes";
}

std::string report_csv_row(const TransferReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.model_id << ',' << r.base_bitwidth << ',' << r.update_bitwidth << ','
       << (r.has_update ? 1 : 0) << ',' << r.base.bytes << ',' << r.base.encode_s << ','
       << r.base.channel_s << ',' << r.base.decode_s << ',' << r.base.dequantize_s << ','
       << r.update.bytes << ',' << r.update.encode_s << ',' << r.update.channel_s << ','
       << r.update.decode_s << ',' << r.apply_s << ',' << r.startup_latency_low_s << ','
       << r.startup_latency_proxy_s << ',' << r.total_bytes << ',' << r.max_phase_bytes;
    return os.str();
}

}  // namespace p2u
