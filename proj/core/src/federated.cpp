#include "fode/federated.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "fode/checkpoint.hpp"
#include "fode/log.hpp"
#include "fode/rng.hpp"

namespace fode {

float RoundMetrics::mean_client_loss() const {
    if (client_losses.empty()) return 0.0f;
    double acc = 0.0;
    for (float l : client_losses) acc += l;
    return (float)(acc / (double)client_losses.size());
}

std::vector<int> sample_clients(int clients, double fraction, std::uint64_t seed, int round) {
    if (clients < 1) throw ConfigError("sample_clients: clients must be >= 1");
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ConfigError("sample_clients: fraction must be in (0, 1]");
    }
    const int m = std::max((int)std::lround(fraction * clients), 1);
    std::vector<int> ids((std::size_t)clients);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(mix_seed({seed, 0x5e1ec7ULL, (std::uint64_t)round}));
    rng.shuffle(ids);
    ids.resize((std::size_t)m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

ModelConfig client_config(const ModelConfig& global_config, const ClientSpec& client) {
    ModelConfig c = global_config;
    if (client.iterations) c.iterations = *client.iterations;
    return c;
}

} // namespace

ClientResult client_update(const ParameterSet& global_params, const ModelConfig& global_config,
                           const ClientSpec& client, std::span<const int> shard,
                           const Dataset& dataset, std::uint64_t run_seed, int round) {
    if (shard.empty()) throw DataError("client " + std::to_string(client.id) + " has an empty shard");
    if (client.epochs < 0) throw ConfigError("client epochs must be >= 0");

    Model model = build_model(client_config(global_config, client), /*seed=*/0);
    try {
        model.params().load_values(global_params);
    } catch (const ShapeError& e) {
        throw ShapeError("client " + std::to_string(client.id) +
                         ": global parameters are incongruent with the client model (" + e.what() + ")");
    }

    const std::uint64_t stream = mix_seed({run_seed, (std::uint64_t)client.id, (std::uint64_t)round});
    ClientResult result;
    result.sample_count = (long)shard.size();

    double last_epoch_loss = 0.0;
    long last_epoch_batches = 0;
    for (int epoch = 0; epoch < client.epochs; ++epoch) {
        BatchStream stream_batches(dataset, shard, client.batch_size, stream, epoch);
        double epoch_loss = 0.0;
        long batches = 0;
        while (auto batch = stream_batches.next()) {
            Tensor logits = model.forward(batch->images);
            Tensor loss = softmax_cross_entropy(logits, batch->labels);
            model.params().zero_grads();
            backward(loss);
            sgd_step(model.params(), client.learning_rate);
            epoch_loss += loss.item();
            ++batches;
        }
        last_epoch_loss = epoch_loss;
        last_epoch_batches = batches;
    }

    if (client.epochs == 0) {
        // No training requested; report the shard loss of the received model.
        double total = 0.0;
        long batches = 0;
        BatchStream eval_batches(dataset, shard, client.batch_size, stream, 0);
        while (auto batch = eval_batches.next()) {
            Tensor logits = model.forward(batch->images);
            total += softmax_cross_entropy(logits, batch->labels).item();
            ++batches;
        }
        result.final_loss = (float)(total / (double)batches);
    } else {
        result.final_loss = (float)(last_epoch_loss / (double)last_epoch_batches);
    }
    result.params = std::move(model.params());
    return result;
}

ParameterSet aggregate_weighted(std::span<const ParameterSet> locals, std::span<const long> counts) {
    if (locals.empty()) throw ConfigError("aggregate_weighted: no parameter sets");
    if (locals.size() != counts.size()) {
        throw ConfigError("aggregate_weighted: counts do not align with parameter sets");
    }
    double total = 0.0;
    for (long n : counts) {
        if (n <= 0) throw ConfigError("aggregate_weighted: sample counts must be > 0");
        total += (double)n;
    }
    for (std::size_t k = 1; k < locals.size(); ++k) {
        ParameterSet::require_congruent(locals[0], locals[k]);
    }

    ParameterSet out = locals[0].clone();
    for (std::size_t e = 0; e < out.size(); ++e) {
        auto dst = out[e].tensor.mut_data();
        for (std::size_t j = 0; j < dst.size(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < locals.size(); ++k) {
                acc += (double)counts[k] * (double)locals[k][e].tensor.data()[j];
            }
            dst[j] = (float)(acc / total);
        }
    }
    return out;
}

EvalResult evaluate(const ParameterSet& params, const ModelConfig& config,
                    std::optional<int> override_iterations, const Dataset& dataset,
                    int batch_size) {
    if (dataset.n() == 0) throw DataError("evaluate: dataset is empty");
    Model model = build_model(config, /*seed=*/0);
    model.params().load_values(params);

    const int k_top = std::min(5, dataset.class_count);
    double loss_sum = 0.0;
    long correct1 = 0, correct5 = 0;

    std::vector<int> order((std::size_t)dataset.n());
    std::iota(order.begin(), order.end(), 0);
    for (int off = 0; off < dataset.n(); off += batch_size) {
        const int end = std::min(dataset.n(), off + batch_size);
        std::span<const int> idx(order.data() + off, (std::size_t)(end - off));
        auto [images, labels] = gather(dataset, idx);
        Tensor logits = model.forward(images, override_iterations);
        loss_sum += (double)softmax_cross_entropy(logits, labels).item() * (double)labels.size();

        const int classes = logits.dim(1);
        const float* l = logits.data().data();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const float* row = l + (long)i * classes;
            const int y = labels[i];
            const float target = row[y];
            // Rank = how many classes strictly beat the target (earlier index
            // wins ties, matching an argmax scan).
            int better = 0;
            for (int c = 0; c < classes; ++c) {
                if (row[c] > target || (row[c] == target && c < y)) ++better;
            }
            if (better == 0) ++correct1;
            if (better < k_top) ++correct5;
        }
    }

    EvalResult out;
    out.loss = (float)(loss_sum / (double)dataset.n());
    out.top1 = (float)((double)correct1 / (double)dataset.n());
    out.top5 = dataset.class_count <= 5 ? 1.0f : (float)((double)correct5 / (double)dataset.n());
    return out;
}

ParameterSet feddf_aggregate(std::span<const ParameterSet> locals, std::span<const long> counts,
                             std::span<const ClientSpec> clients, const ModelConfig& global_config,
                             const Dataset& dataset, std::span<const int> server_pool,
                             const FeddfOptions& options, std::uint64_t seed, int round) {
    ParameterSet student_params = aggregate_weighted(locals, counts);
    if (options.steps == 0) return student_params;
    if (server_pool.empty()) {
        throw DataError("feddf_aggregate: server sample pool is empty");
    }
    if (clients.size() != locals.size()) {
        throw ConfigError("feddf_aggregate: client specs do not align with parameter sets");
    }

    // Budget: deterministic subsample of the pool.
    std::vector<int> pool(server_pool.begin(), server_pool.end());
    const std::uint64_t stream = mix_seed({seed, 0xfddfULL, (std::uint64_t)round});
    if (options.server_samples > 0 && options.server_samples < (long)pool.size()) {
        Rng rng(mix_seed({stream, 0xb0d6e7ULL}));
        rng.shuffle(pool);
        pool.resize((std::size_t)options.server_samples);
        std::sort(pool.begin(), pool.end());
    }

    // Teacher committee: each client model runs with its own iteration count.
    std::vector<Model> teachers;
    teachers.reserve(locals.size());
    for (std::size_t k = 0; k < locals.size(); ++k) {
        ModelConfig c = global_config;
        if (clients[k].iterations) c.iterations = *clients[k].iterations;
        Model m = build_model(c, /*seed=*/0);
        m.params().load_values(locals[k]);
        teachers.push_back(std::move(m));
    }

    Model student = build_model(global_config, /*seed=*/0);
    student.params().load_values(student_params);
    const float inv_t = 1.0f / options.temperature;

    int step = 0;
    for (int epoch = 0; step < options.steps; ++epoch) {
        BatchStream batches(dataset, pool, options.batch_size, stream, epoch);
        while (step < options.steps) {
            auto batch = batches.next();
            if (!batch) break;
            // Mean of the teachers' temperature-softened distributions.
            const int bsz = (int)batch->labels.size();
            std::vector<float> teacher_probs((std::size_t)bsz * global_config.num_classes, 0.0f);
            for (auto& teacher : teachers) {
                Tensor logits = teacher.forward(batch->images);
                const auto probs = softmax_rows(scale(logits, inv_t));
                for (std::size_t j = 0; j < teacher_probs.size(); ++j) teacher_probs[j] += probs[j];
            }
            for (auto& p : teacher_probs) p /= (float)teachers.size();

            Tensor targets = Tensor::from({bsz, global_config.num_classes}, std::move(teacher_probs));
            Tensor student_logits = student.forward(batch->images);
            Tensor loss = softmax_cross_entropy_soft(scale(student_logits, inv_t), targets);
            student.params().zero_grads();
            backward(loss);
            sgd_step(student.params(), options.learning_rate);
            ++step;
        }
    }
    return std::move(student.params());
}

FedRun run_fedavg(const FedConfig& config, const ModelConfig& global_config,
                  std::span<const ClientSpec> clients, const PartitionSpec& partition,
                  const Dataset& train, const Dataset& eval, std::span<const int> server_pool) {
    if ((int)clients.size() != config.clients) {
        throw ConfigError("run_fedavg: expected " + std::to_string(config.clients) +
                          " client specs, got " + std::to_string(clients.size()));
    }
    if (partition.clients() != config.clients) {
        throw ConfigError("run_fedavg: partition has " + std::to_string(partition.clients()) +
                          " clients, config expects " + std::to_string(config.clients));
    }
    if (config.rounds < 1) throw ConfigError("run_fedavg: rounds must be >= 1");
    if (config.algorithm == Algorithm::feddf && config.feddf.steps > 0 && server_pool.empty()) {
        throw DataError("run_fedavg: feddf requires a non-empty server sample pool");
    }

    FedRun run;
    run.global_config = global_config;
    run.global_params = std::move(build_model(global_config, config.seed).params());
    const long per_transfer = serialized_size(global_config);

    for (int t = 1; t <= config.rounds; ++t) {
        RoundMetrics metrics;
        metrics.round = t;
        metrics.selected = sample_clients(config.clients, config.fraction, config.seed, t);

        std::vector<ClientResult> results((std::size_t)metrics.selected.size());
        auto run_client = [&](std::size_t slot) {
            const int k = metrics.selected[slot];
            try {
                results[slot] = client_update(run.global_params, global_config,
                                              clients[(std::size_t)k],
                                              partition.assignments[(std::size_t)k], train,
                                              config.seed, t);
            } catch (const Error& e) {
                throw Error("round " + std::to_string(t) + ", client " + std::to_string(k) + ": " +
                            e.what());
            }
        };
        if (config.parallel_clients) {
            std::vector<std::future<void>> futures;
            futures.reserve(results.size());
            for (std::size_t s = 0; s < results.size(); ++s) {
                futures.push_back(std::async(std::launch::async, run_client, s));
            }
            for (auto& f : futures) f.get();
        } else {
            for (std::size_t s = 0; s < results.size(); ++s) run_client(s);
        }

        std::vector<ParameterSet> locals;
        std::vector<long> counts;
        locals.reserve(results.size());
        for (auto& r : results) {
            metrics.client_losses.push_back(r.final_loss);
            counts.push_back(r.sample_count);
            locals.push_back(std::move(r.params));
        }

        run.global_params =
            config.algorithm == Algorithm::feddf
                ? feddf_aggregate(locals, counts, clients, global_config, train, server_pool,
                                  config.feddf, config.seed, t)
                : aggregate_weighted(locals, counts);

        const EvalResult ev = evaluate(run.global_params, global_config, std::nullopt, eval);
        metrics.global_loss = ev.loss;
        metrics.top1 = ev.top1;
        metrics.top5 = ev.top5;
        metrics.bytes = 2L * (long)metrics.selected.size() * per_transfer;
        log::debug("round " + std::to_string(t) + ": loss " + std::to_string(ev.loss) + ", top1 " +
                   std::to_string(ev.top1));
        run.rounds.push_back(std::move(metrics));
    }
    return run;
}

} // namespace fode
