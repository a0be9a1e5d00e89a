#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "p2u/channel.hpp"
#include "p2u/codec.hpp"
#include "p2u/errors.hpp"
#include "p2u/model.hpp"

namespace p2u {

namespace detail {
class Socket;
}

// Wire protocol: every message is a 32-bit little-endian length prefix, a
// 1-byte type tag and a versioned body. Byte layout in FORMATS.md.

enum class MessageType : std::uint8_t {
    ModelRequest = 1,
    ModelResponse = 2,
    UpdateRequest = 3,
    UpdateResponse = 4,
    ListModels = 5,
    ModelList = 6,
};

enum class RemoteErrorCode : std::uint8_t {
    UnknownModel = 1,
    UnknownBitwidth = 2,
    ChecksumMismatch = 3,
    Malformed = 4,
    Internal = 5,
};

/// Error response relayed from the server.
class RemoteError : public ProtocolError {
public:
    RemoteError(RemoteErrorCode code, const std::string& message)
        : ProtocolError(message), code_(code) {}

    RemoteErrorCode code() const { return code_; }

private:
    RemoteErrorCode code_;
};

/// Ok body of a ModelResponse/UpdateResponse: the bitstream plus the
/// server-side encode time for the receiver's latency ledger.
struct StreamResponse {
    double encode_seconds = 0.0;
    Bitstream stream;
};

/// Server-side store of float models plus a memo cache of encoded
/// artifacts. The cache is pure: entries equal fresh encodings.
class ServerRepository {
public:
    void add_model(std::string id, TensorModel model);
    /// Swaps a model in place and drops its cached artifacts (simulates a
    /// restarted server with a re-encoded repository).
    void replace_model(const std::string& id, TensorModel model);

    bool empty() const;
    std::vector<std::string> model_ids() const;

    struct Artifact {
        Bitstream stream;
        double encode_seconds = 0.0;
    };

    /// Cached-or-freshly-encoded artifact at the requested bitwidth.
    Artifact encoded(const std::string& id, std::uint32_t bitwidth) const;
    Artifact encoded_update(const std::string& id, std::uint32_t base_bitwidth,
                            std::optional<double> tolerance) const;

    /// The reference model at the 32-bit quantization level.
    TensorModel high_precision(const std::string& id) const;

    ModelManifest manifest(const std::string& id) const;

private:
    const TensorModel& model_ref_locked(const std::string& id) const;

    mutable std::mutex mu_;
    std::map<std::string, TensorModel> models_;
    mutable std::map<std::pair<std::string, std::uint32_t>, Artifact> cache_;
    mutable std::map<std::tuple<std::string, std::uint32_t, std::uint32_t>, Artifact>
        update_cache_;
};

/// Concurrent request/response server over the wire protocol.
class Server {
public:
    explicit Server(ServerRepository& repo) : repo_(repo) {}
    ~Server();

    /// Binds and starts serving; port 0 picks an ephemeral port. Returns the
    /// bound port.
    std::uint16_t start(const std::string& host, std::uint16_t port);
    void stop();
    std::uint16_t port() const { return port_; }

private:
    struct Impl;
    void accept_loop();
    void handle_session(detail::Socket& sock);

    ServerRepository& repo_;
    std::uint16_t port_ = 0;
    std::thread accept_thread_;
    std::shared_ptr<Impl> impl_;
};

/// Runs a server until the process dies.
void serve(ServerRepository& repo, const std::string& listen_address);

// --- client ---------------------------------------------------------------

enum class SessionState { Idle, AwaitingModel, ServingLowPrec, AwaitingUpdate, ServingProxy };

/// Receiver-side state machine over the eight-step workflow. Inference is
/// rejected until the base model arrives; the served model swaps atomically
/// on upgrade and ServingProxy is terminal.
class ClientSession {
public:
    SessionState state() const;
    bool can_infer() const;
    /// Current model handle; throws Error while inference is not permitted.
    std::shared_ptr<const TensorModel> model() const;
    Digest base_digest() const;

    void begin_request();                                    // Idle -> AwaitingModel
    void deliver_base(TensorModel low, const Digest& digest);  // -> ServingLowPrec
    void begin_update();                                     // -> AwaitingUpdate
    void abort_update();                                     // back to ServingLowPrec
    /// Replaces the base during AwaitingUpdate (checksum-mismatch re-fetch).
    void rebase(TensorModel low, const Digest& digest);
    void deliver_proxy(TensorModel proxy);                   // -> ServingProxy (terminal)

private:
    mutable std::mutex mu_;
    SessionState state_ = SessionState::Idle;
    std::shared_ptr<const TensorModel> current_;
    Digest base_digest_{};
};

/// One request/response connection to a server.
class ClientConnection {
public:
    static ClientConnection connect(const std::string& endpoint);

    StreamResponse request_model(const std::string& model_id, std::uint32_t bitwidth);
    StreamResponse request_update(const std::string& model_id, std::uint32_t base_bitwidth,
                                  const Digest& base_checksum, std::optional<double> tolerance);
    std::vector<ModelManifest> list_models();

    ClientConnection(ClientConnection&&) noexcept;
    ClientConnection& operator=(ClientConnection&&) noexcept;
    ~ClientConnection();

private:
    ClientConnection();
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

enum class TriggerPolicy { Immediate, AfterDelay, Manual };
enum class FetchPhase { None, Base, Proxy };

struct FetchOptions {
    TriggerPolicy trigger = TriggerPolicy::Immediate;
    double trigger_delay_s = 0.0;
    std::optional<double> tolerance;  // adaptive update bitwidth when set
    ChannelConfig channel{};
    ClientSession* session = nullptr;        // external session to drive, optional
    std::function<void()> after_base;        // fault-injection hook, optional
};

struct FetchResult {
    std::optional<TensorModel> low;
    std::optional<TensorModel> proxy;
    Digest base_digest{};
    std::uint32_t update_bitwidth = 0;
    TransferReport report;
    FetchPhase reached = FetchPhase::None;
    bool refetched_base = false;
    std::string error;  // empty on success

    bool ok() const { return error.empty(); }
};

/// Full workflow: request the base, optionally trigger the precision update,
/// reconstruct the proxy. Network failure mid-way yields partial results
/// with the phase marker set; a checksum-mismatch refusal is recovered by
/// exactly one base re-fetch.
FetchResult fetch_progressive(const std::string& endpoint, const std::string& model_id,
                              std::uint32_t low_bitwidth, const FetchOptions& options = {});

}  // namespace p2u
