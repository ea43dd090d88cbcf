#include "fode/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>

#include "fode/checkpoint.hpp"
#include "fode/log.hpp"

namespace fode {

namespace {

constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

// Closes the descriptor on scope exit.
struct Fd {
    int fd = -1;
    Fd() = default;
    explicit Fd(int f) : fd(f) {}
    Fd(Fd&& other) noexcept : fd(other.fd) { other.fd = -1; }
    Fd& operator=(Fd&& other) noexcept {
        if (this != &other) {
            reset();
            fd = other.fd;
            other.fd = -1;
        }
        return *this;
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }
    void reset() {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
    bool valid() const { return fd >= 0; }
};

void set_timeout(int fd, double seconds) {
    timeval tv{};
    tv.tv_sec = (time_t)seconds;
    tv.tv_usec = (suseconds_t)((seconds - std::floor(seconds)) * 1e6);
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

void write_all(int fd, const std::uint8_t* data, std::size_t len) {
    std::size_t sent = 0;
    while (sent < len) {
        const ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                throw ProtocolError("send timed out");
            }
            throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
        }
        sent += (std::size_t)n;
    }
}

void read_exact(int fd, std::uint8_t* data, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
        const ssize_t n = ::recv(fd, data + got, len - got, 0);
        if (n == 0) throw ProtocolError("connection closed mid-frame");
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                throw ProtocolError("receive timed out");
            }
            throw ProtocolError(std::string("recv failed: ") + std::strerror(errno));
        }
        got += (std::size_t)n;
    }
}

void send_message(int fd, const WireMessage& msg) {
    const auto frame = encode_frame(msg);
    write_all(fd, frame.data(), frame.size());
}

WireMessage read_message(int fd) {
    std::uint8_t len_bytes[4];
    read_exact(fd, len_bytes, 4);
    const std::uint32_t body_len = (std::uint32_t)len_bytes[0] | ((std::uint32_t)len_bytes[1] << 8) |
                                   ((std::uint32_t)len_bytes[2] << 16) |
                                   ((std::uint32_t)len_bytes[3] << 24);
    if (body_len < 9 || body_len > kMaxFrameBytes) {
        throw ProtocolError("malformed frame length " + std::to_string(body_len));
    }
    std::vector<std::uint8_t> body(body_len);
    read_exact(fd, body.data(), body.size());
    return decode_frame_body(body);
}

void put_u32_payload(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((std::uint8_t)(v >> (8 * i)));
}

void put_u64_payload(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((std::uint8_t)(v >> (8 * i)));
}

sockaddr_in make_addr(const std::string& host, int port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons((std::uint16_t)port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw ProtocolError("invalid IPv4 address: " + host);
    }
    return addr;
}

struct Hello {
    std::uint32_t client_id = 0;
    long sample_count = 0;
    std::optional<int> override_iterations;
    ConfigDigest digest{};
};

Hello parse_hello(const WireMessage& msg) {
    if (msg.type != MsgType::hello) {
        throw ProtocolError("expected HELLO, got message type " +
                            std::to_string((int)msg.type));
    }
    if (msg.payload.size() != 8 + 4 + 32) {
        throw ProtocolError("malformed HELLO payload of " + std::to_string(msg.payload.size()) +
                            " bytes");
    }
    Hello h;
    h.client_id = msg.client_id;
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | msg.payload[(std::size_t)i];
    h.sample_count = (long)n;
    std::uint32_t c = 0;
    for (int i = 3; i >= 0; --i) c = (c << 8) | msg.payload[(std::size_t)(8 + i)];
    if (c > 0) h.override_iterations = (int)c;
    std::copy(msg.payload.begin() + 12, msg.payload.end(), h.digest.begin());
    return h;
}

} // namespace

ServeResult serve(const std::string& host, int port, const FedConfig& config,
                  const ModelConfig& global_config, const Dataset& eval,
                  const std::function<void(int)>& on_listening, const Dataset* server_data,
                  std::span<const int> server_pool) {
    if (config.algorithm == Algorithm::feddf && config.feddf.steps > 0 &&
        (server_data == nullptr || server_pool.empty())) {
        throw ConfigError("serve: feddf requires server-side data and a sample pool");
    }

    Fd listener(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener.valid()) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
    const int one = 1;
    ::setsockopt(listener.fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr = make_addr(host, port);
    if (::bind(listener.fd, (sockaddr*)&addr, sizeof(addr)) != 0) {
        throw ProtocolError(std::string("bind failed: ") + std::strerror(errno));
    }
    if (::listen(listener.fd, config.clients) != 0) {
        throw ProtocolError(std::string("listen failed: ") + std::strerror(errno));
    }
    {
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(listener.fd, (sockaddr*)&bound, &len);
        if (on_listening) on_listening((int)ntohs(bound.sin_port));
    }

    const ConfigDigest expected_digest = config_digest(global_config);
    std::vector<Fd> conns((std::size_t)config.clients);
    std::vector<long> counts((std::size_t)config.clients, 0);
    std::vector<ClientSpec> specs((std::size_t)config.clients);

    for (int accepted = 0; accepted < config.clients; ++accepted) {
        Fd conn(::accept(listener.fd, nullptr, nullptr));
        if (!conn.valid()) throw ProtocolError(std::string("accept failed: ") + std::strerror(errno));
        set_timeout(conn.fd, config.round_timeout_s);
        Hello hello;
        try {
            hello = parse_hello(read_message(conn.fd));
        } catch (const ProtocolError& e) {
            log::warn(std::string("dropping connection: ") + e.what());
            throw;
        }
        if (hello.client_id >= (std::uint32_t)config.clients) {
            throw ProtocolError("HELLO from unknown client id " + std::to_string(hello.client_id));
        }
        if (conns[hello.client_id].valid()) {
            throw ProtocolError("duplicate HELLO from client " + std::to_string(hello.client_id));
        }
        if (hello.digest != expected_digest) {
            WireMessage bye;
            bye.type = MsgType::bye;
            bye.client_id = hello.client_id;
            const std::string reason = "config digest mismatch";
            bye.payload.assign(reason.begin(), reason.end());
            send_message(conn.fd, bye);
            throw ProtocolError("client " + std::to_string(hello.client_id) +
                                " rejected: config digest mismatch");
        }
        counts[hello.client_id] = hello.sample_count;
        specs[hello.client_id].id = (int)hello.client_id;
        specs[hello.client_id].iterations = hello.override_iterations;
        conns[hello.client_id] = std::move(conn);
    }

    ServeResult result;
    result.run.global_config = global_config;
    result.run.global_params = std::move(build_model(global_config, config.seed).params());
    const long per_transfer = serialized_size(global_config);

    for (int t = 1; t <= config.rounds; ++t) {
        RoundMetrics metrics;
        metrics.round = t;
        metrics.selected = sample_clients(config.clients, config.fraction, config.seed, t);
        RoundByteLog bytes_log;
        bytes_log.round = t;
        bytes_log.participants = (int)metrics.selected.size();

        const auto global_blob = serialize_params(result.run.global_params, global_config);
        for (int k : metrics.selected) {
            WireMessage msg;
            msg.type = MsgType::global_params;
            msg.round = (std::uint32_t)t;
            msg.client_id = (std::uint32_t)k;
            msg.payload = global_blob;
            send_message(conns[(std::size_t)k].fd, msg);
            bytes_log.downlink_bytes += frame_size(msg);
        }

        std::vector<ParameterSet> locals;
        std::vector<long> local_counts;
        std::vector<ClientSpec> local_specs;
        for (int k : metrics.selected) {
            WireMessage local = read_message(conns[(std::size_t)k].fd);
            if (local.type != MsgType::local_params || (int)local.client_id != k) {
                throw ProtocolError("expected LOCAL_PARAMS from client " + std::to_string(k));
            }
            bytes_log.uplink_bytes += frame_size(local);
            DecodedCheckpoint ckpt = deserialize_params(local.payload);
            if (ckpt.digest != expected_digest) {
                throw ProtocolError("client " + std::to_string(k) +
                                    " returned parameters with a mismatched digest");
            }
            WireMessage m = read_message(conns[(std::size_t)k].fd);
            if (m.type != MsgType::metrics || m.payload.size() != 4) {
                throw ProtocolError("expected METRICS from client " + std::to_string(k));
            }
            bytes_log.metrics_bytes += frame_size(m);
            std::uint32_t bits = 0;
            for (int i = 3; i >= 0; --i) bits = (bits << 8) | m.payload[(std::size_t)i];
            float loss;
            std::memcpy(&loss, &bits, 4);

            metrics.client_losses.push_back(loss);
            locals.push_back(std::move(ckpt.params));
            local_counts.push_back(counts[(std::size_t)k]);
            local_specs.push_back(specs[(std::size_t)k]);
        }

        result.run.global_params =
            config.algorithm == Algorithm::feddf
                ? feddf_aggregate(locals, local_counts, local_specs, global_config, *server_data,
                                  server_pool, config.feddf, config.seed, t)
                : aggregate_weighted(locals, local_counts);

        const EvalResult ev = evaluate(result.run.global_params, global_config, std::nullopt, eval);
        metrics.global_loss = ev.loss;
        metrics.top1 = ev.top1;
        metrics.top5 = ev.top5;
        metrics.bytes = 2L * (long)metrics.selected.size() * per_transfer;
        result.run.rounds.push_back(std::move(metrics));
        result.byte_log.push_back(bytes_log);
    }

    for (int k = 0; k < config.clients; ++k) {
        WireMessage bye;
        bye.type = MsgType::bye;
        bye.client_id = (std::uint32_t)k;
        send_message(conns[(std::size_t)k].fd, bye);
    }
    return result;
}

void connect_client(const std::string& host, int port, const ClientSpec& client,
                    const ModelConfig& global_config, std::span<const int> shard,
                    const Dataset& dataset, std::uint64_t run_seed, double timeout_s) {
    Fd conn(::socket(AF_INET, SOCK_STREAM, 0));
    if (!conn.valid()) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
    set_timeout(conn.fd, timeout_s);
    sockaddr_in addr = make_addr(host, port);
    if (::connect(conn.fd, (sockaddr*)&addr, sizeof(addr)) != 0) {
        throw ProtocolError(std::string("connect failed: ") + std::strerror(errno));
    }

    // The client's shape config: the global config with its own C. The digest
    // ignores C for ode families, so heterogeneous clients still match.
    ModelConfig own_config = global_config;
    if (client.iterations) own_config.iterations = *client.iterations;
    const ConfigDigest digest = config_digest(own_config);

    WireMessage hello;
    hello.type = MsgType::hello;
    hello.client_id = (std::uint32_t)client.id;
    put_u64_payload(hello.payload, (std::uint64_t)shard.size());
    put_u32_payload(hello.payload, client.iterations ? (std::uint32_t)*client.iterations : 0u);
    hello.payload.insert(hello.payload.end(), digest.begin(), digest.end());
    send_message(conn.fd, hello);

    for (;;) {
        WireMessage msg = read_message(conn.fd);
        if (msg.type == MsgType::bye) {
            if (!msg.payload.empty()) {
                throw ProtocolError("server rejected client " + std::to_string(client.id) + ": " +
                                    std::string(msg.payload.begin(), msg.payload.end()));
            }
            return;
        }
        if (msg.type != MsgType::global_params) {
            throw ProtocolError("unexpected message type " + std::to_string((int)msg.type) +
                                " while waiting for GLOBAL_PARAMS");
        }
        DecodedCheckpoint ckpt = deserialize_params(msg.payload);
        require_digest(ckpt, own_config);

        const ClientResult result = client_update(ckpt.params, global_config, client, shard,
                                                  dataset, run_seed, (int)msg.round);

        WireMessage reply;
        reply.type = MsgType::local_params;
        reply.round = msg.round;
        reply.client_id = (std::uint32_t)client.id;
        reply.payload = serialize_params(result.params, own_config);
        send_message(conn.fd, reply);

        WireMessage metrics;
        metrics.type = MsgType::metrics;
        metrics.round = msg.round;
        metrics.client_id = (std::uint32_t)client.id;
        std::uint32_t bits;
        std::memcpy(&bits, &result.final_loss, 4);
        put_u32_payload(metrics.payload, bits);
        send_message(conn.fd, metrics);
    }
}

} // namespace fode
