#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fode/dataset.hpp"
#include "fode/model.hpp"
#include "fode/params.hpp"
#include "fode/partition.hpp"

namespace fode {

// One participant. For ode families `iterations` may differ per client;
// every client otherwise shares the global model's shape config.
struct ClientSpec {
    int id = 0;
    std::optional<int> iterations; // override of the global C; empty = global
    int epochs = 1;                // E
    int batch_size = 16;           // B
    float learning_rate = 0.05f;   // eta
};

enum class Algorithm { fedavg, feddf };

struct FeddfOptions {
    long server_samples = 0;       // sample budget; 0 = whole server pool
    int steps = 0;                 // distillation mini-batch steps
    int batch_size = 16;
    float learning_rate = 0.02f;
    float temperature = 3.0f;
};

struct FedConfig {
    int clients = 1;          // K
    double fraction = 1.0;    // r
    int rounds = 1;           // T
    std::uint64_t seed = 0;
    Algorithm algorithm = Algorithm::fedavg;
    FeddfOptions feddf;
    bool parallel_clients = false;
    double round_timeout_s = 300.0; // socket transport only
};

struct RoundMetrics {
    int round = 0;
    std::vector<int> selected;        // S_t, ascending
    std::vector<float> client_losses; // aligned with `selected`
    float global_loss = 0.0f;
    float top1 = 0.0f;
    float top5 = 0.0f;
    long bytes = 0; // 2 * |S_t| * serialized parameter-set size

    float mean_client_loss() const;
    bool operator==(const RoundMetrics&) const = default;
};

// m = max(round(r*K), 1) ids, uniform without replacement, ascending,
// deterministic in (seed, round).
std::vector<int> sample_clients(int clients, double fraction, std::uint64_t seed, int round);

struct ClientResult {
    ParameterSet params;
    float final_loss = 0.0f; // mean loss over the final local epoch
    long sample_count = 0;   // n_k
};

// ClientUpdate: copies the global parameters into a model built with the
// client's own iteration count, runs E epochs of mini-batch SGD over the
// shard, and returns the updated parameters. `global_params` is not touched.
// The client's batch order depends only on (run_seed, client id, round).
ClientResult client_update(const ParameterSet& global_params, const ModelConfig& global_config,
                           const ClientSpec& client, std::span<const int> shard,
                           const Dataset& dataset, std::uint64_t run_seed, int round);

// Entry-wise convex combination with weights n_k normalized over the
// participants. Accumulates in double.
ParameterSet aggregate_weighted(std::span<const ParameterSet> locals, std::span<const long> counts);

struct EvalResult {
    float loss = 0.0f;
    float top1 = 0.0f;
    float top5 = 0.0f;
};

// Loss and top-1/top-5 accuracy over a dataset. With class_count <= 5 the
// top-5 accuracy is reported as 1.
EvalResult evaluate(const ParameterSet& params, const ModelConfig& config,
                    std::optional<int> override_iterations, const Dataset& dataset,
                    int batch_size = 64);

// FedDF-style aggregation: start from the weighted average, then distill the
// clients' mean temperature-softened predictions on server-side samples into
// the global model. Each client model predicts with its own iteration count.
// steps == 0 reduces to aggregate_weighted bitwise.
ParameterSet feddf_aggregate(std::span<const ParameterSet> locals, std::span<const long> counts,
                             std::span<const ClientSpec> clients, const ModelConfig& global_config,
                             const Dataset& dataset, std::span<const int> server_pool,
                             const FeddfOptions& options, std::uint64_t seed, int round);

struct FedRun {
    std::vector<RoundMetrics> rounds;
    ParameterSet global_params;
    ModelConfig global_config;
};

// Algorithm driver: T rounds of sample -> broadcast -> local update ->
// aggregate -> evaluate. Deterministic in (config, clients, partition,
// dataset); client execution order cannot change the result because client
// RNG streams hang off (seed, id, round) and aggregation is id-ordered.
FedRun run_fedavg(const FedConfig& config, const ModelConfig& global_config,
                  std::span<const ClientSpec> clients, const PartitionSpec& partition,
                  const Dataset& train, const Dataset& eval,
                  std::span<const int> server_pool = {});

} // namespace fode
