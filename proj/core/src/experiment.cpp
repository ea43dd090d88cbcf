#include "fode/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>
#include <thread>

#include "fode/checkpoint.hpp"
#include "fode/log.hpp"
#include "fode/partition.hpp"
#include "fode/sizing.hpp"
#include "fode/transport.hpp"

namespace fode {

using nlohmann::json;

namespace {

std::string fmt_float(double v, int decimals = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

std::string fmt_alpha(double alpha) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", alpha);
    return buf;
}

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("config section '" + where + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

DatasetSection parse_dataset(const json& j) {
    require_keys(j, "dataset",
                 {"kind", "classes", "per_class_train", "per_class_test", "side", "noise_sigma",
                  "seed", "dir"});
    DatasetSection d;
    const std::string kind = get_or<std::string>(j, "kind", "synth");
    if (kind == "synth") {
        d.kind = DatasetSection::Kind::synth;
    } else if (kind == "cifar10") {
        d.kind = DatasetSection::Kind::cifar10;
    } else {
        throw ConfigError("dataset.kind must be synth|cifar10, got '" + kind + "'");
    }
    d.classes = get_or<int>(j, "classes", d.classes);
    d.per_class_train = get_or<int>(j, "per_class_train", d.per_class_train);
    d.per_class_test = get_or<int>(j, "per_class_test", d.per_class_test);
    d.side = get_or<int>(j, "side", d.side);
    d.noise_sigma = get_or<float>(j, "noise_sigma", d.noise_sigma);
    d.seed = get_or<std::uint64_t>(j, "seed", d.seed);
    d.dir = get_or<std::string>(j, "dir", d.dir);
    if (d.kind == DatasetSection::Kind::cifar10 && d.dir.empty()) {
        throw ConfigError("dataset.dir is required for kind cifar10");
    }
    return d;
}

ModelSection parse_model(const json& j) {
    require_keys(j, "model",
                 {"family", "depth", "iterations", "widths", "kernel_size", "norm_groups",
                  "euler_mode", "classes"});
    ModelSection m;
    m.family = family_from_name(get_or<std::string>(j, "family", "odenet"));
    if (j.contains("depth")) m.depth = j.at("depth").get<int>();
    if (j.contains("iterations")) m.iterations = j.at("iterations").get<int>();
    if (m.depth && m.iterations) {
        throw ConfigError("model: specify either depth or iterations, not both");
    }
    if (j.contains("widths")) {
        const auto w = j.at("widths").get<std::vector<int>>();
        if (w.size() != 3) throw ConfigError("model.widths must have exactly 3 entries");
        m.widths = std::array<int, 3>{w[0], w[1], w[2]};
    }
    m.kernel_size = get_or<int>(j, "kernel_size", m.kernel_size);
    m.norm_groups = get_or<int>(j, "norm_groups", m.norm_groups);
    m.euler_mode = euler_mode_from_name(get_or<std::string>(j, "euler_mode", "interval_step"));
    if (j.contains("classes")) m.classes = j.at("classes").get<int>();
    return m;
}

TrainSection parse_train(const json& j) {
    require_keys(j, "train", {"epochs", "batch_size", "learning_rate", "seed", "tested_iterations"});
    TrainSection t;
    t.epochs = get_or<int>(j, "epochs", t.epochs);
    t.batch_size = get_or<int>(j, "batch_size", t.batch_size);
    t.learning_rate = get_or<float>(j, "learning_rate", t.learning_rate);
    t.seed = get_or<std::uint64_t>(j, "seed", t.seed);
    t.tested_iterations = get_or<std::vector<int>>(j, "tested_iterations", {});
    return t;
}

FeddfSection parse_feddf(const json& j) {
    require_keys(j, "federated.feddf",
                 {"server_samples", "steps", "batch_size", "learning_rate", "temperature",
                  "server_pool_fraction"});
    FeddfSection f;
    if (j.contains("server_samples")) {
        if (j.at("server_samples").is_array()) {
            f.server_samples = j.at("server_samples").get<std::vector<long>>();
        } else {
            f.server_samples = {j.at("server_samples").get<long>()};
        }
        if (f.server_samples.empty()) throw ConfigError("federated.feddf.server_samples is empty");
    }
    f.steps = get_or<int>(j, "steps", f.steps);
    f.batch_size = get_or<int>(j, "batch_size", f.batch_size);
    f.learning_rate = get_or<float>(j, "learning_rate", f.learning_rate);
    f.temperature = get_or<float>(j, "temperature", f.temperature);
    f.server_pool_fraction = get_or<double>(j, "server_pool_fraction", f.server_pool_fraction);
    if (f.server_pool_fraction < 0.0 || f.server_pool_fraction >= 1.0) {
        throw ConfigError("federated.feddf.server_pool_fraction must be in [0,1)");
    }
    return f;
}

FederatedSection parse_federated(const json& j) {
    require_keys(j, "federated",
                 {"algorithm", "clients", "fraction", "rounds", "seed", "epochs", "batch_size",
                  "learning_rate", "client_mix", "transport", "parallel_clients", "timeout_s",
                  "feddf"});
    FederatedSection f;
    if (j.contains("algorithm")) {
        std::vector<std::string> names;
        if (j.at("algorithm").is_array()) {
            names = j.at("algorithm").get<std::vector<std::string>>();
        } else {
            names = {j.at("algorithm").get<std::string>()};
        }
        f.algorithms.clear();
        for (const auto& n : names) {
            if (n == "fedavg") {
                f.algorithms.push_back(Algorithm::fedavg);
            } else if (n == "feddf") {
                f.algorithms.push_back(Algorithm::feddf);
            } else {
                throw ConfigError("federated.algorithm must be fedavg|feddf, got '" + n + "'");
            }
        }
    }
    f.clients = get_or<int>(j, "clients", f.clients);
    f.fraction = get_or<double>(j, "fraction", f.fraction);
    f.rounds = get_or<int>(j, "rounds", f.rounds);
    f.seed = get_or<std::uint64_t>(j, "seed", f.seed);
    f.epochs = get_or<int>(j, "epochs", f.epochs);
    f.batch_size = get_or<int>(j, "batch_size", f.batch_size);
    f.learning_rate = get_or<float>(j, "learning_rate", f.learning_rate);
    if (j.contains("client_mix")) {
        for (const auto& e : j.at("client_mix")) {
            require_keys(e, "federated.client_mix[]", {"count", "depth", "iterations"});
            ClientMixEntry entry;
            entry.count = get_or<int>(e, "count", 0);
            if (e.contains("depth")) entry.depth = e.at("depth").get<int>();
            if (e.contains("iterations")) entry.iterations = e.at("iterations").get<int>();
            if (entry.count < 1) throw ConfigError("federated.client_mix[].count must be >= 1");
            if (entry.depth && entry.iterations) {
                throw ConfigError("federated.client_mix[]: specify either depth or iterations");
            }
            f.client_mix.push_back(entry);
        }
    }
    f.transport = get_or<std::string>(j, "transport", f.transport);
    if (f.transport != "in_process" && f.transport != "socket") {
        throw ConfigError("federated.transport must be in_process|socket");
    }
    f.parallel_clients = get_or<bool>(j, "parallel_clients", f.parallel_clients);
    f.timeout_s = get_or<double>(j, "timeout_s", f.timeout_s);
    if (j.contains("feddf")) f.feddf = parse_feddf(j.at("feddf"));
    return f;
}

PartitionSection parse_partition(const json& j) {
    require_keys(j, "partition", {"alpha", "seed"});
    PartitionSection p;
    if (j.contains("alpha")) {
        if (j.at("alpha").is_array()) {
            p.alphas = j.at("alpha").get<std::vector<double>>();
        } else {
            p.alphas = {j.at("alpha").get<double>()};
        }
        if (p.alphas.empty()) throw ConfigError("partition.alpha is empty");
    }
    p.seed = get_or<std::uint64_t>(j, "seed", p.seed);
    return p;
}

} // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + origin + ": " + e.what());
    }
    require_keys(j, origin,
                 {"command", "dataset", "model", "train", "federated", "partition", "output",
                  "checkpoint", "eval_iterations"});
    ExperimentConfig c;
    c.command = get_or<std::string>(j, "command", "");
    if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));
    if (j.contains("model")) c.model = parse_model(j.at("model"));
    if (j.contains("train")) c.train = parse_train(j.at("train"));
    if (j.contains("federated")) c.federated = parse_federated(j.at("federated"));
    if (j.contains("partition")) c.partition = parse_partition(j.at("partition"));
    if (j.contains("output")) {
        require_keys(j.at("output"), "output", {"dir"});
        c.output_dir = get_or<std::string>(j.at("output"), "dir", c.output_dir);
    }
    c.checkpoint = get_or<std::string>(j, "checkpoint", "");
    if (j.contains("eval_iterations")) c.eval_iterations = j.at("eval_iterations").get<int>();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file: " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_experiment_config(buffer.str(), file.string());
}

std::string effective_config_json(const ExperimentConfig& c) {
    json j;
    j["command"] = c.command;
    json d;
    d["kind"] = c.dataset.kind == DatasetSection::Kind::synth ? "synth" : "cifar10";
    if (c.dataset.kind == DatasetSection::Kind::synth) {
        d["classes"] = c.dataset.classes;
        d["per_class_train"] = c.dataset.per_class_train;
        d["per_class_test"] = c.dataset.per_class_test;
        d["side"] = c.dataset.side;
        d["noise_sigma"] = c.dataset.noise_sigma;
        d["seed"] = c.dataset.seed;
    } else {
        d["dir"] = c.dataset.dir;
    }
    j["dataset"] = d;

    json m;
    m["family"] = family_name(c.model.family);
    if (c.model.depth) m["depth"] = *c.model.depth;
    if (c.model.iterations) m["iterations"] = *c.model.iterations;
    const auto widths = c.model.widths.value_or(preset_widths(c.model.family));
    m["widths"] = std::vector<int>{widths[0], widths[1], widths[2]};
    m["kernel_size"] = c.model.kernel_size;
    m["norm_groups"] = c.model.norm_groups;
    m["euler_mode"] = euler_mode_name(c.model.euler_mode);
    if (c.model.classes) m["classes"] = *c.model.classes;
    j["model"] = m;

    json t;
    t["epochs"] = c.train.epochs;
    t["batch_size"] = c.train.batch_size;
    t["learning_rate"] = c.train.learning_rate;
    t["seed"] = c.train.seed;
    t["tested_iterations"] = c.train.tested_iterations;
    j["train"] = t;

    json f;
    std::vector<std::string> algs;
    for (Algorithm a : c.federated.algorithms) {
        algs.push_back(a == Algorithm::fedavg ? "fedavg" : "feddf");
    }
    f["algorithm"] = algs;
    f["clients"] = c.federated.clients;
    f["fraction"] = c.federated.fraction;
    f["rounds"] = c.federated.rounds;
    f["seed"] = c.federated.seed;
    f["epochs"] = c.federated.epochs;
    f["batch_size"] = c.federated.batch_size;
    f["learning_rate"] = c.federated.learning_rate;
    json mix = json::array();
    for (const auto& e : c.federated.client_mix) {
        json je;
        je["count"] = e.count;
        if (e.depth) je["depth"] = *e.depth;
        if (e.iterations) je["iterations"] = *e.iterations;
        mix.push_back(je);
    }
    f["client_mix"] = mix;
    f["transport"] = c.federated.transport;
    f["parallel_clients"] = c.federated.parallel_clients;
    f["timeout_s"] = c.federated.timeout_s;
    json fd;
    fd["server_samples"] = c.federated.feddf.server_samples;
    fd["steps"] = c.federated.feddf.steps;
    fd["batch_size"] = c.federated.feddf.batch_size;
    fd["learning_rate"] = c.federated.feddf.learning_rate;
    fd["temperature"] = c.federated.feddf.temperature;
    fd["server_pool_fraction"] = c.federated.feddf.server_pool_fraction;
    f["feddf"] = fd;
    j["federated"] = f;

    json p;
    p["alpha"] = c.partition.alphas;
    p["seed"] = c.partition.seed;
    j["partition"] = p;

    json o;
    o["dir"] = c.output_dir;
    j["output"] = o;
    if (!c.checkpoint.empty()) j["checkpoint"] = c.checkpoint;
    if (c.eval_iterations) j["eval_iterations"] = *c.eval_iterations;
    return j.dump(2) + "\n";
}

std::pair<Dataset, Dataset> build_datasets(const DatasetSection& section) {
    if (section.kind == DatasetSection::Kind::synth) {
        return synth_pair(section.classes, section.per_class_train, section.per_class_test,
                          section.side, section.noise_sigma, section.seed);
    }
    return load_cifar10(section.dir);
}

ModelConfig resolve_model(const ModelSection& section, int dataset_classes) {
    ModelConfig c;
    c.family = section.family;
    const auto widths = section.widths.value_or(preset_widths(section.family));
    c.stem_channels = widths[0];
    c.stage_channels = widths;
    if (section.depth) {
        c.iterations = depth_to_iterations(*section.depth).iterations;
    } else if (section.iterations) {
        c.iterations = *section.iterations;
    } else {
        throw ConfigError("model: one of depth or iterations is required");
    }
    c.kernel_size = section.kernel_size;
    c.norm_groups = section.norm_groups;
    c.euler_mode = section.euler_mode;
    c.num_classes = section.classes.value_or(dataset_classes);
    validate_config(c);
    return c;
}

std::vector<ClientSpec> resolve_clients(const FederatedSection& fed) {
    std::vector<ClientSpec> clients;
    if (fed.client_mix.empty()) {
        for (int k = 0; k < fed.clients; ++k) {
            ClientSpec spec;
            spec.id = k;
            spec.epochs = fed.epochs;
            spec.batch_size = fed.batch_size;
            spec.learning_rate = fed.learning_rate;
            clients.push_back(spec);
        }
        return clients;
    }
    for (const auto& entry : fed.client_mix) {
        std::optional<int> iters;
        if (entry.depth) iters = depth_to_iterations(*entry.depth).iterations;
        if (entry.iterations) iters = *entry.iterations;
        for (int i = 0; i < entry.count; ++i) {
            ClientSpec spec;
            spec.id = (int)clients.size();
            spec.iterations = iters;
            spec.epochs = fed.epochs;
            spec.batch_size = fed.batch_size;
            spec.learning_rate = fed.learning_rate;
            clients.push_back(spec);
        }
    }
    if ((int)clients.size() != fed.clients) {
        throw ConfigError("federated.client_mix expands to " + std::to_string(clients.size()) +
                          " clients, but federated.clients is " + std::to_string(fed.clients));
    }
    return clients;
}

namespace {

void ensure_output_dir(const ExperimentConfig& config) {
    std::filesystem::create_directories(config.output_dir);
    std::ofstream echo(std::filesystem::path(config.output_dir) / "effective_config.json",
                       std::ios::trunc);
    echo << effective_config_json(config);
}

// Server pool = tail of the train set, held back from the client partition
// whenever any swept algorithm performs distillation.
struct FederateData {
    Dataset train;
    Dataset test;
    std::vector<int> client_index_head; // labels passed to the partitioner
    std::vector<int> server_pool;       // indices into train
};

FederateData prepare_federate_data(const ExperimentConfig& config) {
    FederateData data;
    auto [train, test] = build_datasets(config.dataset);
    data.train = std::move(train);
    data.test = std::move(test);

    const bool wants_feddf =
        std::any_of(config.federated.algorithms.begin(), config.federated.algorithms.end(),
                    [](Algorithm a) { return a == Algorithm::feddf; }) &&
        config.federated.feddf.steps > 0;
    long head = data.train.n();
    if (wants_feddf) {
        const long pool =
            (long)std::llround(config.federated.feddf.server_pool_fraction * data.train.n());
        head = data.train.n() - pool;
        if (head < config.federated.clients) {
            throw ConfigError("federated: server pool fraction leaves too few client samples");
        }
        for (long i = head; i < data.train.n(); ++i) data.server_pool.push_back((int)i);
    }
    data.client_index_head.resize((std::size_t)head);
    std::iota(data.client_index_head.begin(), data.client_index_head.end(), 0);
    return data;
}

PartitionSpec partition_head(const FederateData& data, int clients, double alpha,
                             std::uint64_t seed) {
    std::vector<int> head_labels;
    head_labels.reserve(data.client_index_head.size());
    for (int idx : data.client_index_head) {
        head_labels.push_back(data.train.labels[(std::size_t)idx]);
    }
    return dirichlet_partition(head_labels, clients, alpha, seed);
}

std::string variant_suffix(const ExperimentConfig& config, Algorithm algorithm, double alpha,
                           long budget) {
    std::string s;
    if (config.partition.alphas.size() > 1) s += "_alpha" + fmt_alpha(alpha);
    if (config.federated.algorithms.size() > 1) {
        s += algorithm == Algorithm::fedavg ? "_fedavg" : "_feddf";
    }
    if (config.federated.feddf.server_samples.size() > 1 && algorithm == Algorithm::feddf) {
        s += "_budget" + std::to_string(budget);
    }
    return s;
}

void write_metrics_csv(const std::filesystem::path& file, const std::vector<RoundMetrics>& rounds) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw Error("cannot open metrics file for writing: " + file.string());
    out << "round,selected,mean_client_loss,global_loss,top1,top5,bytes\n";
    for (const auto& m : rounds) {
        std::string sel;
        for (std::size_t i = 0; i < m.selected.size(); ++i) {
            if (i) sel += "|";
            sel += std::to_string(m.selected[i]);
        }
        out << m.round << "," << sel << "," << fmt_float(m.mean_client_loss()) << ","
            << fmt_float(m.global_loss) << "," << fmt_float(m.top1) << "," << fmt_float(m.top5)
            << "," << m.bytes << "\n";
        out.flush(); // inspectable mid-flight on long runs
    }
}

FedConfig make_fed_config(const ExperimentConfig& config, Algorithm algorithm, long budget) {
    FedConfig fc;
    fc.clients = config.federated.clients;
    fc.fraction = config.federated.fraction;
    fc.rounds = config.federated.rounds;
    fc.seed = config.federated.seed;
    fc.algorithm = algorithm;
    fc.feddf.server_samples = budget;
    fc.feddf.steps = config.federated.feddf.steps;
    fc.feddf.batch_size = config.federated.feddf.batch_size;
    fc.feddf.learning_rate = config.federated.feddf.learning_rate;
    fc.feddf.temperature = config.federated.feddf.temperature;
    fc.parallel_clients = config.federated.parallel_clients;
    fc.round_timeout_s = config.federated.timeout_s;
    return fc;
}

FedRun run_socket_variant(const FedConfig& fc, const ModelConfig& global_config,
                          const std::vector<ClientSpec>& clients, const PartitionSpec& partition,
                          const Dataset& train, const Dataset& test,
                          std::span<const int> server_pool) {
    std::promise<int> port_promise;
    auto port_future = port_promise.get_future();
    ServeResult result;
    std::exception_ptr server_error;

    std::thread server_thread([&] {
        try {
            result = serve("127.0.0.1", 0, fc, global_config, test,
                           [&](int p) { port_promise.set_value(p); }, &train, server_pool);
        } catch (...) {
            server_error = std::current_exception();
            try {
                port_promise.set_value(-1);
            } catch (const std::future_error&) {
            }
        }
    });

    const int port = port_future.get();
    std::vector<std::thread> client_threads;
    std::vector<std::exception_ptr> client_errors((std::size_t)fc.clients);
    if (port > 0) {
        for (int k = 0; k < fc.clients; ++k) {
            client_threads.emplace_back([&, k] {
                try {
                    connect_client("127.0.0.1", port, clients[(std::size_t)k],
                                   global_config, partition.assignments[(std::size_t)k], train,
                                   fc.seed, fc.round_timeout_s);
                } catch (...) {
                    client_errors[(std::size_t)k] = std::current_exception();
                }
            });
        }
    }
    for (auto& t : client_threads) t.join();
    server_thread.join();
    if (server_error) std::rethrow_exception(server_error);
    for (auto& e : client_errors) {
        if (e) std::rethrow_exception(e);
    }
    return std::move(result.run);
}

} // namespace

void run_count(const CountRequest& request, std::ostream& out) {
    if (request.depths.empty() && request.iterations.empty()) {
        throw ConfigError("count: at least one of depths or iterations is required");
    }
    out << "family,depth,C,params,bytes,mib";
    if (request.versus_resnet50) out << ",reduction_pct";
    out << "\n";

    ModelConfig reference;
    if (request.versus_resnet50) {
        reference = preset_config(Family::resnet, 50);
        reference.num_classes = request.classes;
        reference.in_channels = request.in_channels;
    }

    for (Family family : request.families) {
        struct Row {
            int depth;
            int iterations;
        };
        std::vector<Row> rows;
        for (int d : request.depths) rows.push_back({d, depth_to_iterations(d).iterations});
        for (int c : request.iterations) rows.push_back({6 * c + 6, c});

        for (const Row& row : rows) {
            ModelConfig c;
            c.family = family;
            const auto widths = request.widths.value_or(preset_widths(family));
            c.stem_channels = widths[0];
            c.stage_channels = widths;
            c.iterations = row.iterations;
            c.num_classes = request.classes;
            c.in_channels = request.in_channels;
            validate_config(c);
            const CommSize size = communication_size(c);
            out << family_name(family) << "," << row.depth << "," << row.iterations << ","
                << size.param_count << "," << size.payload_bytes << "," << fmt_float(size.mib, 2);
            if (request.versus_resnet50) {
                out << "," << fmt_float(reduction_ratio(c, reference), 2);
            }
            out << "\n";
        }
    }
}

void run_train(const ExperimentConfig& config) {
    ensure_output_dir(config);
    auto [train, test] = build_datasets(config.dataset);
    const ModelConfig model_config = resolve_model(config.model, train.class_count);

    Model model = build_model(model_config, config.train.seed);
    std::vector<int> all((std::size_t)train.n());
    std::iota(all.begin(), all.end(), 0);
    for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
        BatchStream batches(train, all, config.train.batch_size, config.train.seed, epoch);
        double epoch_loss = 0.0;
        long n_batches = 0;
        while (auto batch = batches.next()) {
            Tensor loss = softmax_cross_entropy(model.forward(batch->images), batch->labels);
            model.params().zero_grads();
            backward(loss);
            sgd_step(model.params(), config.train.learning_rate);
            epoch_loss += loss.item();
            ++n_batches;
        }
        log::info("epoch " + std::to_string(epoch + 1) + "/" +
                  std::to_string(config.train.epochs) + ": mean loss " +
                  fmt_float(epoch_loss / (double)n_batches, 4));
    }

    const std::filesystem::path out_dir(config.output_dir);
    save_checkpoint(out_dir / "model.fode", model.params(), model_config);

    std::vector<int> tested = config.train.tested_iterations;
    if (tested.empty()) tested = {model_config.iterations};

    std::ofstream grid(out_dir / "grid.csv", std::ios::trunc);
    grid << "trained_C,tested_C,loss,top1,top5\n";
    for (int c : tested) {
        const std::optional<int> override_c =
            c == model_config.iterations ? std::nullopt : std::optional<int>(c);
        const EvalResult ev = evaluate(model.params(), model_config, override_c, test);
        grid << model_config.iterations << "," << c << "," << fmt_float(ev.loss) << ","
             << fmt_float(ev.top1) << "," << fmt_float(ev.top5) << "\n";
        grid.flush();
    }
}

void run_federate(const ExperimentConfig& config) {
    ensure_output_dir(config);
    FederateData data = prepare_federate_data(config);
    const ModelConfig global_config = resolve_model(config.model, data.train.class_count);
    const std::vector<ClientSpec> clients = resolve_clients(config.federated);
    const std::filesystem::path out_dir(config.output_dir);

    for (double alpha : config.partition.alphas) {
        const PartitionSpec partition =
            partition_head(data, config.federated.clients, alpha, config.partition.seed);
        for (Algorithm algorithm : config.federated.algorithms) {
            const std::vector<long> budgets = algorithm == Algorithm::feddf
                                                  ? config.federated.feddf.server_samples
                                                  : std::vector<long>{0};
            for (long budget : budgets) {
                const FedConfig fc = make_fed_config(config, algorithm, budget);
                FedRun run =
                    config.federated.transport == "socket"
                        ? run_socket_variant(fc, global_config, clients, partition, data.train,
                                             data.test, data.server_pool)
                        : run_fedavg(fc, global_config, clients, partition, data.train, data.test,
                                     data.server_pool);
                const std::string suffix = variant_suffix(config, algorithm, alpha, budget);
                write_metrics_csv(out_dir / ("rounds" + suffix + ".csv"), run.rounds);
                save_checkpoint(out_dir / ("global" + suffix + ".fode"), run.global_params,
                                global_config);
            }
        }
    }
}

void run_partition(const ExperimentConfig& config) {
    ensure_output_dir(config);
    auto [train, test] = build_datasets(config.dataset);
    (void)test;
    const std::filesystem::path out_dir(config.output_dir);

    for (double alpha : config.partition.alphas) {
        const PartitionSpec spec = dirichlet_partition(train.labels, config.federated.clients,
                                                       alpha, config.partition.seed);
        const auto hist = partition_histogram(spec, train.labels, train.class_count);

        std::string name = "partition";
        if (config.partition.alphas.size() > 1) name += "_alpha" + fmt_alpha(alpha);
        std::ofstream out(out_dir / (name + ".csv"), std::ios::trunc);
        out << "client,n_k";
        for (int c = 0; c < train.class_count; ++c) out << ",class_" << c;
        out << ",chi_square\n";

        std::vector<double> overall((std::size_t)train.class_count, 0.0);
        for (int l : train.labels) overall[(std::size_t)l] += 1.0;
        for (auto& v : overall) v /= (double)train.n();

        for (int k = 0; k < spec.clients(); ++k) {
            double stat = 0.0;
            for (int c = 0; c < train.class_count; ++c) {
                const double expected = (double)spec.client_counts[(std::size_t)k] *
                                        overall[(std::size_t)c];
                if (expected > 0.0) {
                    const double d = (double)hist[(std::size_t)k][(std::size_t)c] - expected;
                    stat += d * d / expected;
                }
            }
            out << k << "," << spec.client_counts[(std::size_t)k];
            for (int c = 0; c < train.class_count; ++c) out << "," << hist[(std::size_t)k][(std::size_t)c];
            out << "," << fmt_float(stat, 4) << "\n";
        }
    }
}

EvalResult run_eval(const ExperimentConfig& config, std::ostream& out) {
    if (config.checkpoint.empty()) throw ConfigError("eval: checkpoint path is required");
    const DecodedCheckpoint ckpt = load_checkpoint(config.checkpoint);
    auto [train, test] = build_datasets(config.dataset);
    (void)train;
    const EvalResult ev =
        evaluate(ckpt.params, ckpt.config,
                 config.eval_iterations && *config.eval_iterations != ckpt.config.iterations
                     ? config.eval_iterations
                     : std::nullopt,
                 test);
    out << "loss,top1,top5\n"
        << fmt_float(ev.loss) << "," << fmt_float(ev.top1) << "," << fmt_float(ev.top5) << "\n";
    return ev;
}

int run_config(const ExperimentConfig& config) {
    if (config.command == "train") {
        run_train(config);
    } else if (config.command == "federate") {
        run_federate(config);
    } else if (config.command == "partition") {
        run_partition(config);
    } else if (config.command == "eval") {
        ensure_output_dir(config);
        std::ofstream out(std::filesystem::path(config.output_dir) / "eval.csv", std::ios::trunc);
        run_eval(config, out);
    } else if (config.command == "count") {
        CountRequest request;
        request.families = {config.model.family};
        if (config.model.depth) request.depths = {*config.model.depth};
        if (config.model.iterations) request.iterations = {*config.model.iterations};
        ensure_output_dir(config);
        std::ofstream out(std::filesystem::path(config.output_dir) / "counts.csv", std::ios::trunc);
        run_count(request, out);
    } else {
        throw ConfigError("unknown command '" + config.command +
                          "' (expected count|train|federate|partition|eval)");
    }
    return 0;
}

void run_serve(const ExperimentConfig& config, int port) {
    ensure_output_dir(config);
    FederateData data = prepare_federate_data(config);
    const ModelConfig global_config = resolve_model(config.model, data.train.class_count);
    if (config.partition.alphas.size() != 1 || config.federated.algorithms.size() != 1) {
        throw ConfigError("serve: sweeps are not supported over sockets; pin one alpha/algorithm");
    }
    const FedConfig fc = make_fed_config(config, config.federated.algorithms[0],
                                         config.federated.feddf.server_samples[0]);
    ServeResult result = serve("0.0.0.0", port, fc, global_config, data.test,
                               [&](int p) { log::info("listening on port " + std::to_string(p)); },
                               &data.train, data.server_pool);
    write_metrics_csv(std::filesystem::path(config.output_dir) / "rounds.csv", result.run.rounds);
    save_checkpoint(std::filesystem::path(config.output_dir) / "global.fode",
                    result.run.global_params, global_config);
}

void run_client(const ExperimentConfig& config, int client_id, const std::string& host, int port) {
    FederateData data = prepare_federate_data(config);
    const ModelConfig global_config = resolve_model(config.model, data.train.class_count);
    const std::vector<ClientSpec> clients = resolve_clients(config.federated);
    if (client_id < 0 || client_id >= (int)clients.size()) {
        throw ConfigError("client id " + std::to_string(client_id) + " out of range");
    }
    if (config.partition.alphas.size() != 1) {
        throw ConfigError("client: sweeps are not supported over sockets; pin one alpha");
    }
    const PartitionSpec partition = partition_head(data, config.federated.clients,
                                                   config.partition.alphas[0],
                                                   config.partition.seed);
    connect_client(host, port, clients[(std::size_t)client_id],
                   global_config, partition.assignments[(std::size_t)client_id], data.train,
                   config.federated.seed, config.federated.timeout_s);
}

} // namespace fode
