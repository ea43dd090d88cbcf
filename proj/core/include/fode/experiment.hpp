#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fode/federated.hpp"
#include "fode/model.hpp"

namespace fode {

// Declarative experiment description, parsed from a JSON config file.
// Parsing is strict: unknown keys anywhere are rejected.

struct DatasetSection {
    enum class Kind { synth, cifar10 };
    Kind kind = Kind::synth;
    // synth
    int classes = 4;
    int per_class_train = 48;
    int per_class_test = 32;
    int side = 8;
    float noise_sigma = 0.25f;
    std::uint64_t seed = 7;
    // cifar10
    std::string dir;
};

struct ModelSection {
    Family family = Family::odenet;
    std::optional<int> depth;
    std::optional<int> iterations;
    std::optional<std::array<int, 3>> widths; // default: preset widths
    int kernel_size = 3;
    int norm_groups = 8;
    EulerMode euler_mode = EulerMode::interval_step;
    std::optional<int> classes; // default: dataset class count
};

struct TrainSection {
    int epochs = 10;
    int batch_size = 16;
    float learning_rate = 0.05f;
    std::uint64_t seed = 3;
    std::vector<int> tested_iterations;
};

struct ClientMixEntry {
    int count = 0;
    std::optional<int> depth;
    std::optional<int> iterations;
};

struct FeddfSection {
    std::vector<long> server_samples{0}; // sweep; 0 = whole pool
    int steps = 0;
    int batch_size = 16;
    float learning_rate = 0.02f;
    float temperature = 3.0f;
    double server_pool_fraction = 0.25; // train tail held back for the server
};

struct FederatedSection {
    std::vector<Algorithm> algorithms{Algorithm::fedavg}; // sweep
    int clients = 2;
    double fraction = 1.0;
    int rounds = 5;
    std::uint64_t seed = 1;
    int epochs = 1;
    int batch_size = 16;
    float learning_rate = 0.05f;
    std::vector<ClientMixEntry> client_mix;
    std::string transport = "in_process"; // in_process | socket
    bool parallel_clients = false;
    double timeout_s = 300.0;
    FeddfSection feddf;
};

struct PartitionSection {
    std::vector<double> alphas{1.0}; // sweep
    std::uint64_t seed = 5;
};

struct ExperimentConfig {
    std::string command; // count | train | federate | partition | eval
    DatasetSection dataset;
    ModelSection model;
    TrainSection train;
    FederatedSection federated;
    PartitionSection partition;
    std::string output_dir = "out";
    // eval command
    std::string checkpoint;
    std::optional<int> eval_iterations;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& file);
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& origin = "<inline>");

// Serializes the config with all defaults resolved; written into the output
// directory as effective_config.json so runs are self-describing.
std::string effective_config_json(const ExperimentConfig& config);

// Materialized datasets for a config (train, test).
std::pair<Dataset, Dataset> build_datasets(const DatasetSection& section);

// Resolves the model section into a ModelConfig (widths default to the
// family preset, class count defaults to the dataset's).
ModelConfig resolve_model(const ModelSection& section, int dataset_classes);

// Expands the client mix into per-client specs (ids 0..K-1).
std::vector<ClientSpec> resolve_clients(const FederatedSection& fed);

// --- commands ------------------------------------------------------------

struct CountRequest {
    std::vector<Family> families{Family::odenet};
    std::vector<int> depths;     // mapped through depth_to_iterations
    std::vector<int> iterations; // explicit C values
    std::optional<std::array<int, 3>> widths;
    int classes = 10;
    int in_channels = 3;
    bool versus_resnet50 = false; // append reduction column vs resnet-50 preset
};

// Emits CSV: family,depth,C,params,bytes,mib[,reduction_pct].
void run_count(const CountRequest& request, std::ostream& out);

// Trains one model, saves a checkpoint, then evaluates it under each
// requested override C, writing the trained-as x tested-as grid.
void run_train(const ExperimentConfig& config);

// Runs FedAvg / FedDF over the (algorithm, alpha, budget) sweep; one
// round-metrics CSV and final checkpoint per variant.
void run_federate(const ExperimentConfig& config);

// Emits per-client class histograms (plus a chi-square column) per alpha.
void run_partition(const ExperimentConfig& config);

// Loads a checkpoint (digest-checked), evaluates it on the config's test
// split with the requested override, writes eval.csv and returns the result.
EvalResult run_eval(const ExperimentConfig& config, std::ostream& out);

// Dispatches on config.command. Returns the process exit code.
int run_config(const ExperimentConfig& config);

// Socket-mode processes sharing one config file: the server derives
// everything it needs from the config; each client derives its shard from
// the partition section.
void run_serve(const ExperimentConfig& config, int port);
void run_client(const ExperimentConfig& config, int client_id, const std::string& host, int port);

} // namespace fode
