#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fode/federated.hpp"
#include "fode/wire.hpp"

namespace fode {

// Measured frame bytes per round (server-side view).
struct RoundByteLog {
    int round = 0;
    long downlink_bytes = 0; // GLOBAL_PARAMS frames sent
    long uplink_bytes = 0;   // LOCAL_PARAMS frames received
    long metrics_bytes = 0;  // METRICS frames received
    int participants = 0;
};

struct ServeResult {
    FedRun run;
    std::vector<RoundByteLog> byte_log;
};

// Runs the federation server over TCP. Expects exactly config.clients HELLO
// connections (ids 0..K-1, each exactly once); a HELLO with a mismatched
// config digest is answered with BYE and fails the run. Then drives the same
// round loop as run_fedavg with remote ClientUpdate calls, producing bitwise
// identical RoundMetrics to the in-process run for the same seeds.
// Pass port 0 to pick a free port; on_listening (if set) receives the bound
// port before any client is awaited. For feddf aggregation the server-side
// sample pool indexes into `server_data`.
ServeResult serve(const std::string& host, int port, const FedConfig& config,
                  const ModelConfig& global_config, const Dataset& eval,
                  const std::function<void(int)>& on_listening = {},
                  const Dataset* server_data = nullptr,
                  std::span<const int> server_pool = {});

// Runs one client over TCP: HELLO (carrying n_k, the client's iteration
// override, and its config digest), then answers GLOBAL_PARAMS with
// LOCAL_PARAMS + METRICS until BYE. The client owns its shard of the data;
// run_seed must equal the server's config seed for reproducibility.
void connect_client(const std::string& host, int port, const ClientSpec& client,
                    const ModelConfig& global_config, std::span<const int> shard,
                    const Dataset& dataset, std::uint64_t run_seed, double timeout_s = 300.0);

} // namespace fode
