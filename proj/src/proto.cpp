#include "p2u/proto.hpp"

#include <sys/socket.h>

#include <atomic>
#include <chrono>
#include <cstring>

#include "bytes.hpp"
#include "net.hpp"
#include "p2u/errors.hpp"
#include "p2u/quant.hpp"
#include "p2u/update.hpp"

namespace p2u {
namespace {

constexpr std::uint8_t kBodyVersion = 1;
constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Frame {
    MessageType type;
    std::vector<std::uint8_t> body;
};

void write_frame(detail::Socket& sock, MessageType type,
                 std::span<const std::uint8_t> body) {
    std::vector<std::uint8_t> out;
    out.reserve(5 + body.size());
    detail::ByteWriter w(out);
    w.u32(static_cast<std::uint32_t>(body.size() + 1));
    w.u8(static_cast<std::uint8_t>(type));
    w.bytes(body);
    sock.write_all(out);
}

std::optional<Frame> read_frame(detail::Socket& sock) {
    std::uint8_t len_bytes[4];
    if (!sock.read_exact(len_bytes)) return std::nullopt;
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(len_bytes[i]) << (8 * i);
    if (len == 0 || len > kMaxFrameBytes) throw ProtocolError("malformed frame length");

    std::vector<std::uint8_t> payload(len);
    if (!sock.read_exact(payload)) throw IoError("connection closed mid-message");
    Frame f;
    f.type = static_cast<MessageType>(payload[0]);
    f.body.assign(payload.begin() + 1, payload.end());
    return f;
}

void check_body_version(detail::ByteReader& r) {
    if (r.u8() != kBodyVersion) throw ProtocolError("unsupported message body version");
}

std::vector<std::uint8_t> ok_response_body(const StreamResponse& resp) {
    std::vector<std::uint8_t> body;
    detail::ByteWriter w(body);
    w.u8(kBodyVersion);
    w.u8(0);  // status ok
    w.f64(resp.encode_seconds);
    w.u64(resp.stream.bytes.size());
    w.bytes(resp.stream.bytes);
    return body;
}

std::vector<std::uint8_t> error_response_body(RemoteErrorCode code, const std::string& message) {
    std::vector<std::uint8_t> body;
    detail::ByteWriter w(body);
    w.u8(kBodyVersion);
    w.u8(1);  // status error
    w.u8(static_cast<std::uint8_t>(code));
    w.str(message);
    return body;
}

StreamResponse parse_stream_response(const std::vector<std::uint8_t>& body) {
    detail::ByteReader r(body, "response");
    check_body_version(r);
    const std::uint8_t status = r.u8();
    if (status == 1) {
        const auto code = static_cast<RemoteErrorCode>(r.u8());
        throw RemoteError(code, r.str());
    }
    if (status != 0) throw ProtocolError("malformed response status");
    StreamResponse resp;
    resp.encode_seconds = r.f64();
    const std::uint64_t n = r.u64();
    auto bytes = r.take(n);
    resp.stream.bytes.assign(bytes.begin(), bytes.end());
    return resp;
}

bool valid_bitwidth(std::uint32_t b) { return b == 4 || b == 8 || b == 16 || b == 32; }

}  // namespace

// --- repository -------------------------------------------------------------

void ServerRepository::add_model(std::string id, TensorModel model) {
    validate(model);
    std::lock_guard lock(mu_);
    models_[std::move(id)] = std::move(model);
}

void ServerRepository::replace_model(const std::string& id, TensorModel model) {
    validate(model);
    std::lock_guard lock(mu_);
    models_[id] = std::move(model);
    std::erase_if(cache_, [&](const auto& kv) { return kv.first.first == id; });
    std::erase_if(update_cache_, [&](const auto& kv) { return std::get<0>(kv.first) == id; });
}

bool ServerRepository::empty() const {
    std::lock_guard lock(mu_);
    return models_.empty();
}

std::vector<std::string> ServerRepository::model_ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> ids;
    ids.reserve(models_.size());
    for (const auto& [id, _] : models_) ids.push_back(id);
    return ids;
}

const TensorModel& ServerRepository::model_ref_locked(const std::string& id) const {
    const auto it = models_.find(id);
    if (it == models_.end()) throw RemoteError(RemoteErrorCode::UnknownModel, "unknown model '" + id + "'");
    return it->second;
}

ServerRepository::Artifact ServerRepository::encoded(const std::string& id,
                                                     std::uint32_t bitwidth) const {
    if (!valid_bitwidth(bitwidth))
        throw RemoteError(RemoteErrorCode::UnknownBitwidth,
                          "unsupported bitwidth " + std::to_string(bitwidth));
    std::lock_guard lock(mu_);
    const auto key = std::make_pair(id, bitwidth);
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;

    const TensorModel& model = model_ref_locked(id);
    const auto t0 = Clock::now();
    Artifact artifact;
    artifact.stream = encode(quantize(model, QuantizationSpec{bitwidth}));
    artifact.encode_seconds = elapsed(t0);
    cache_[key] = artifact;
    return artifact;
}

ServerRepository::Artifact ServerRepository::encoded_update(const std::string& id,
                                                            std::uint32_t base_bitwidth,
                                                            std::optional<double> tolerance) const {
    const Artifact base = encoded(id, base_bitwidth);
    const Digest base_digest = bitstream_digest(base.stream);

    std::lock_guard lock(mu_);
    const TensorModel& model = model_ref_locked(id);
    const TensorModel high = dequantize(quantize(model, QuantizationSpec{32}));
    const TensorModel low = dequantize(quantize(model, QuantizationSpec{base_bitwidth}));
    const std::uint32_t update_bitwidth =
        tolerance ? select_update_bitwidth(high, low, *tolerance) : 32;

    const auto key = std::make_tuple(id, base_bitwidth, update_bitwidth);
    if (const auto it = update_cache_.find(key); it != update_cache_.end()) return it->second;

    const auto t0 = Clock::now();
    Artifact artifact;
    artifact.stream =
        encode(compute_update(high, low, update_bitwidth, base_bitwidth, base_digest));
    artifact.encode_seconds = elapsed(t0);
    update_cache_[key] = artifact;
    return artifact;
}

TensorModel ServerRepository::high_precision(const std::string& id) const {
    std::lock_guard lock(mu_);
    return dequantize(quantize(model_ref_locked(id), QuantizationSpec{32}));
}

ModelManifest ServerRepository::manifest(const std::string& id) const {
    std::lock_guard lock(mu_);
    model_ref_locked(id);  // existence check
    ModelManifest m;
    m.model_id = id;
    for (const auto& [key, artifact] : cache_) {
        if (key.first != id) continue;
        m.artifacts[key.second] = {artifact.stream.size(), bitstream_digest(artifact.stream)};
    }
    return m;
}

// --- server -----------------------------------------------------------------

struct Server::Impl {
    detail::Socket listener;
    std::atomic<bool> stopping{false};
    std::mutex mu;
    std::vector<std::shared_ptr<detail::Socket>> connections;
    std::vector<std::thread> workers;
};

Server::~Server() { stop(); }

std::uint16_t Server::start(const std::string& host, std::uint16_t port) {
    if (impl_) throw Error("server already started");
    if (repo_.empty()) throw Error("refusing to serve an empty repository");
    impl_ = std::make_shared<Impl>();
    std::uint16_t bound = 0;
    impl_->listener = detail::tcp_listen({host, port}, &bound);
    port_ = bound;
    accept_thread_ = std::thread([this] { accept_loop(); });
    return bound;
}

void Server::stop() {
    if (!impl_) return;
    impl_->stopping = true;
    // shutdown (not close) wakes the blocked accept; the fd stays valid
    // until the accept thread has exited.
    if (impl_->listener.valid()) ::shutdown(impl_->listener.fd(), SHUT_RDWR);
    {
        std::lock_guard lock(impl_->mu);
        for (const auto& conn : impl_->connections)
            if (conn->valid()) ::shutdown(conn->fd(), SHUT_RDWR);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    impl_->listener.close();
    for (auto& t : impl_->workers)
        if (t.joinable()) t.join();
    impl_.reset();
}

void Server::accept_loop() {
    auto impl = impl_;
    while (!impl->stopping) {
        detail::Socket conn = detail::tcp_accept(impl->listener);
        if (!conn.valid()) break;
        std::lock_guard lock(impl->mu);
        if (impl->stopping) break;
        auto shared_conn = std::make_shared<detail::Socket>(std::move(conn));
        impl->connections.push_back(shared_conn);
        impl->workers.emplace_back([this, shared_conn] { handle_session(*shared_conn); });
    }
}

void Server::handle_session(detail::Socket& sock) {
    try {
        while (true) {
            auto frame = read_frame(sock);
            if (!frame) return;  // clean disconnect
            std::vector<std::uint8_t> response_body;
            MessageType response_type = MessageType::ModelResponse;
            try {
                detail::ByteReader r(frame->body, "request");
                switch (frame->type) {
                    case MessageType::ModelRequest: {
                        response_type = MessageType::ModelResponse;
                        check_body_version(r);
                        const std::uint32_t bitwidth = r.u8();
                        const std::string id = r.str();
                        const auto artifact = repo_.encoded(id, bitwidth);
                        response_body =
                            ok_response_body({artifact.encode_seconds, artifact.stream});
                        break;
                    }
                    case MessageType::UpdateRequest: {
                        response_type = MessageType::UpdateResponse;
                        check_body_version(r);
                        const std::uint32_t base_bitwidth = r.u8();
                        const bool has_tolerance = r.u8() != 0;
                        std::optional<double> tolerance;
                        if (has_tolerance) tolerance = r.f64();
                        Digest requested;
                        auto d = r.take(requested.size());
                        std::memcpy(requested.data(), d.data(), requested.size());
                        const std::string id = r.str();

                        const auto base = repo_.encoded(id, base_bitwidth);
                        if (bitstream_digest(base.stream) != requested)
                            throw RemoteError(RemoteErrorCode::ChecksumMismatch,
                                              "base checksum does not match the current "
                                              "artifact; re-fetch the base model");
                        const auto artifact = repo_.encoded_update(id, base_bitwidth, tolerance);
                        response_body =
                            ok_response_body({artifact.encode_seconds, artifact.stream});
                        break;
                    }
                    case MessageType::ListModels: {
                        response_type = MessageType::ModelList;
                        check_body_version(r);
                        std::vector<std::uint8_t> body;
                        detail::ByteWriter w(body);
                        w.u8(kBodyVersion);
                        const auto ids = repo_.model_ids();
                        w.u32(static_cast<std::uint32_t>(ids.size()));
                        for (const auto& id : ids) {
                            const auto m = repo_.manifest(id);
                            w.str(m.model_id);
                            w.u32(static_cast<std::uint32_t>(m.artifacts.size()));
                            for (const auto& [bw, entry] : m.artifacts) {
                                w.u8(static_cast<std::uint8_t>(bw));
                                w.u64(entry.encoded_bytes);
                                w.bytes(entry.checksum);
                            }
                        }
                        response_body = std::move(body);
                        break;
                    }
                    default:
                        throw ProtocolError("unknown message type");
                }
            } catch (const RemoteError& e) {
                response_body = error_response_body(e.code(), e.what());
            } catch (const ProtocolError&) {
                return;  // malformed frame: close the connection
            } catch (const std::exception& e) {
                response_body = error_response_body(RemoteErrorCode::Internal, e.what());
            }
            write_frame(sock, response_type, response_body);
        }
    } catch (const std::exception&) {
        // Transport error: drop the connection.
    }
}

void serve(ServerRepository& repo, const std::string& listen_address) {
    const auto ep = detail::parse_endpoint(listen_address);
    Server server(repo);
    server.start(ep.host, ep.port);
    while (true) std::this_thread::sleep_for(std::chrono::hours(24));
}

// --- client session ---------------------------------------------------------

SessionState ClientSession::state() const {
    std::lock_guard lock(mu_);
    return state_;
}

bool ClientSession::can_infer() const {
    std::lock_guard lock(mu_);
    return state_ == SessionState::ServingLowPrec || state_ == SessionState::AwaitingUpdate ||
           state_ == SessionState::ServingProxy;
}

std::shared_ptr<const TensorModel> ClientSession::model() const {
    std::lock_guard lock(mu_);
    if (state_ != SessionState::ServingLowPrec && state_ != SessionState::AwaitingUpdate &&
        state_ != SessionState::ServingProxy)
        throw Error("inference is not permitted before the base model arrives");
    return current_;
}

Digest ClientSession::base_digest() const {
    std::lock_guard lock(mu_);
    return base_digest_;
}

void ClientSession::begin_request() {
    std::lock_guard lock(mu_);
    if (state_ != SessionState::Idle) throw Error("begin_request requires Idle");
    state_ = SessionState::AwaitingModel;
}

void ClientSession::deliver_base(TensorModel low, const Digest& digest) {
    auto handle = std::make_shared<const TensorModel>(std::move(low));
    std::lock_guard lock(mu_);
    if (state_ != SessionState::AwaitingModel) throw Error("deliver_base requires AwaitingModel");
    current_ = std::move(handle);
    base_digest_ = digest;
    state_ = SessionState::ServingLowPrec;
}

void ClientSession::begin_update() {
    std::lock_guard lock(mu_);
    if (state_ != SessionState::ServingLowPrec) throw Error("begin_update requires ServingLowPrec");
    state_ = SessionState::AwaitingUpdate;
}

void ClientSession::abort_update() {
    std::lock_guard lock(mu_);
    if (state_ != SessionState::AwaitingUpdate) throw Error("abort_update requires AwaitingUpdate");
    state_ = SessionState::ServingLowPrec;
}

void ClientSession::rebase(TensorModel low, const Digest& digest) {
    auto handle = std::make_shared<const TensorModel>(std::move(low));
    std::lock_guard lock(mu_);
    if (state_ != SessionState::AwaitingUpdate) throw Error("rebase requires AwaitingUpdate");
    current_ = std::move(handle);
    base_digest_ = digest;
}

void ClientSession::deliver_proxy(TensorModel proxy) {
    auto handle = std::make_shared<const TensorModel>(std::move(proxy));
    std::lock_guard lock(mu_);
    if (state_ != SessionState::AwaitingUpdate) throw Error("deliver_proxy requires AwaitingUpdate");
    current_ = std::move(handle);
    state_ = SessionState::ServingProxy;
}

// --- client connection --------------------------------------------------------

struct ClientConnection::Impl {
    detail::Socket sock;
};

ClientConnection::ClientConnection() : impl_(std::make_unique<Impl>()) {}
ClientConnection::ClientConnection(ClientConnection&&) noexcept = default;
ClientConnection& ClientConnection::operator=(ClientConnection&&) noexcept = default;
ClientConnection::~ClientConnection() = default;

ClientConnection ClientConnection::connect(const std::string& endpoint) {
    ClientConnection conn;
    conn.impl_->sock = detail::tcp_connect(detail::parse_endpoint(endpoint));
    return conn;
}

StreamResponse ClientConnection::request_model(const std::string& model_id,
                                               std::uint32_t bitwidth) {
    std::vector<std::uint8_t> body;
    detail::ByteWriter w(body);
    w.u8(kBodyVersion);
    w.u8(static_cast<std::uint8_t>(bitwidth));
    w.str(model_id);
    write_frame(impl_->sock, MessageType::ModelRequest, body);

    auto frame = read_frame(impl_->sock);
    if (!frame || frame->type != MessageType::ModelResponse)
        throw ProtocolError("expected a model response");
    return parse_stream_response(frame->body);
}

StreamResponse ClientConnection::request_update(const std::string& model_id,
                                                std::uint32_t base_bitwidth,
                                                const Digest& base_checksum,
                                                std::optional<double> tolerance) {
    std::vector<std::uint8_t> body;
    detail::ByteWriter w(body);
    w.u8(kBodyVersion);
    w.u8(static_cast<std::uint8_t>(base_bitwidth));
    w.u8(tolerance ? 1 : 0);
    if (tolerance) w.f64(*tolerance);
    w.bytes(base_checksum);
    w.str(model_id);
    write_frame(impl_->sock, MessageType::UpdateRequest, body);

    auto frame = read_frame(impl_->sock);
    if (!frame || frame->type != MessageType::UpdateResponse)
        throw ProtocolError("expected an update response");
    return parse_stream_response(frame->body);
}

std::vector<ModelManifest> ClientConnection::list_models() {
    std::vector<std::uint8_t> body;
    detail::ByteWriter w(body);
    w.u8(kBodyVersion);
    write_frame(impl_->sock, MessageType::ListModels, body);

    auto frame = read_frame(impl_->sock);
    if (!frame || frame->type != MessageType::ModelList)
        throw ProtocolError("expected a model list");
    detail::ByteReader r(frame->body, "model list");
    check_body_version(r);
    std::vector<ModelManifest> out;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        ModelManifest m;
        m.model_id = r.str();
        const std::uint32_t n = r.u32();
        for (std::uint32_t k = 0; k < n; ++k) {
            const std::uint32_t bw = r.u8();
            ManifestEntry entry;
            entry.encoded_bytes = r.u64();
            auto d = r.take(entry.checksum.size());
            std::memcpy(entry.checksum.data(), d.data(), entry.checksum.size());
            m.artifacts[bw] = entry;
        }
        out.push_back(std::move(m));
    }
    return out;
}

// --- progressive fetch --------------------------------------------------------

namespace {

struct BaseFetch {
    TensorModel low;
    Digest digest;
    PhaseMetrics metrics;
};

BaseFetch fetch_base(ClientConnection& conn, const std::string& model_id,
                     std::uint32_t bitwidth, const ChannelConfig& channel) {
    const StreamResponse resp = conn.request_model(model_id, bitwidth);

    BaseFetch out;
    out.metrics.bytes = resp.stream.size();
    out.metrics.encode_s = resp.encode_seconds;
    out.metrics.channel_s = channel_time(out.metrics.bytes, channel);

    auto t0 = Clock::now();
    DecodedPayload payload = decode(resp.stream);
    out.metrics.decode_s = elapsed(t0);

    auto* qmodel = std::get_if<QuantizedModel>(&payload);
    if (!qmodel) throw ProtocolError("server sent an update where a model was expected");
    if (qmodel->bitwidth != bitwidth)
        throw ProtocolError("server sent the wrong precision level");

    t0 = Clock::now();
    out.low = dequantize(*qmodel);
    out.metrics.dequantize_s = elapsed(t0);
    out.digest = bitstream_digest(resp.stream);
    return out;
}

}  // namespace

FetchResult fetch_progressive(const std::string& endpoint, const std::string& model_id,
                              std::uint32_t low_bitwidth, const FetchOptions& options) {
    FetchResult result;
    result.report.model_id = model_id;
    result.report.base_bitwidth = low_bitwidth;

    ClientSession own_session;
    ClientSession& session = options.session ? *options.session : own_session;

    try {
        session.begin_request();
        ClientConnection conn = ClientConnection::connect(endpoint);

        BaseFetch base = fetch_base(conn, model_id, low_bitwidth, options.channel);
        result.report.base = base.metrics;
        result.base_digest = base.digest;
        result.low = base.low;
        session.deliver_base(std::move(base.low), base.digest);
        result.reached = FetchPhase::Base;

        if (options.trigger == TriggerPolicy::Manual) {
            finalize_report(result.report);
            validate_report(result.report);
            return result;  // the low-precision model alone is a valid outcome
        }
        if (options.trigger == TriggerPolicy::AfterDelay && options.trigger_delay_s > 0)
            std::this_thread::sleep_for(std::chrono::duration<double>(options.trigger_delay_s));

        if (options.after_base) options.after_base();

        session.begin_update();
        StreamResponse update_resp;
        try {
            update_resp = conn.request_update(model_id, low_bitwidth, result.base_digest,
                                              options.tolerance);
        } catch (const RemoteError& e) {
            if (e.code() != RemoteErrorCode::ChecksumMismatch) throw;
            // The server's artifact changed under us: one automatic re-fetch.
            BaseFetch again = fetch_base(conn, model_id, low_bitwidth, options.channel);
            result.report.base = again.metrics;
            result.base_digest = again.digest;
            result.low = again.low;
            session.rebase(std::move(again.low), again.digest);
            result.refetched_base = true;
            update_resp = conn.request_update(model_id, low_bitwidth, result.base_digest,
                                              options.tolerance);
        }

        result.report.update.bytes = update_resp.stream.size();
        result.report.update.encode_s = update_resp.encode_seconds;
        result.report.update.channel_s = channel_time(update_resp.stream.size(), options.channel);

        auto t0 = Clock::now();
        DecodedPayload payload = decode(update_resp.stream);
        result.report.update.decode_s = elapsed(t0);

        auto* update = std::get_if<UpdateModel>(&payload);
        if (!update) throw ProtocolError("server sent a model where an update was expected");
        if (update->base_bitwidth != low_bitwidth)
            throw ProtocolError("update targets a different base bitwidth");
        result.update_bitwidth = update->delta.bitwidth;
        result.report.update_bitwidth = update->delta.bitwidth;

        t0 = Clock::now();
        TensorModel proxy = apply_update(*result.low, *update, result.base_digest);
        result.report.apply_s = elapsed(t0);

        result.proxy = proxy;
        session.deliver_proxy(std::move(proxy));
        result.report.has_update = true;
        result.reached = FetchPhase::Proxy;

        finalize_report(result.report);
        validate_report(result.report);
        return result;
    } catch (const std::exception& e) {
        result.error = e.what();
        finalize_report(result.report);
        return result;
    }
}

}  // namespace p2u
