#include "fode/partition.hpp"

#include <algorithm>

#include "fode/error.hpp"
#include "fode/rng.hpp"

namespace fode {

long PartitionSpec::total() const {
    long n = 0;
    for (long c : client_counts) n += c;
    return n;
}

namespace {

bool try_partition(std::span<const int> labels, int clients, double alpha, std::uint64_t seed,
                   PartitionSpec& out) {
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);

    out.assignments.assign((std::size_t)clients, {});

    // Class index lists in ascending sample order.
    std::vector<std::vector<int>> by_class((std::size_t)max_label + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw DataError("negative label at index " + std::to_string(i));
        by_class[(std::size_t)labels[i]].push_back((int)i);
    }

    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) continue;
        Rng rng(mix_seed({seed, 0xd112c4ULL, (std::uint64_t)c}));
        const std::vector<double> p = rng.dirichlet(alpha, clients);
        for (int idx : by_class[c]) {
            out.assignments[(std::size_t)rng.categorical(p)].push_back(idx);
        }
    }

    for (std::size_t k = 0; k < out.assignments.size(); ++k) {
        if (out.assignments[k].empty()) return false;
        Rng rng(mix_seed({seed, 0x5f0ffULL, (std::uint64_t)k}));
        rng.shuffle(out.assignments[k]);
    }
    return true;
}

} // namespace

PartitionSpec dirichlet_partition(std::span<const int> labels, int clients, double alpha,
                                  std::uint64_t seed) {
    if (clients < 1) throw DataError("partition requires clients >= 1");
    if (!(alpha > 0.0)) throw DataError("partition requires alpha > 0");
    if ((std::size_t)clients > labels.size()) {
        throw DataError("cannot partition " + std::to_string(labels.size()) + " samples across " +
                        std::to_string(clients) + " clients");
    }

    PartitionSpec spec;
    spec.alpha = alpha;
    spec.seed = seed;
    for (int attempt = 0; attempt < 100; ++attempt) {
        if (try_partition(labels, clients, alpha, seed + (std::uint64_t)attempt, spec)) {
            spec.client_counts.clear();
            for (const auto& a : spec.assignments) spec.client_counts.push_back((long)a.size());
            return spec;
        }
    }
    throw DataError("partition failed: a client received 0 samples in 100 consecutive redraws");
}

std::vector<std::vector<long>> partition_histogram(const PartitionSpec& spec,
                                                   std::span<const int> labels, int class_count) {
    std::vector<std::vector<long>> hist((std::size_t)spec.clients(),
                                        std::vector<long>((std::size_t)class_count, 0));
    for (int k = 0; k < spec.clients(); ++k) {
        for (int idx : spec.assignments[(std::size_t)k]) {
            const int c = labels[(std::size_t)idx];
            if (c >= class_count) throw DataError("label exceeds class_count in histogram");
            ++hist[(std::size_t)k][(std::size_t)c];
        }
    }
    return hist;
}

double partition_chi_square(const PartitionSpec& spec, std::span<const int> labels,
                            int class_count) {
    const auto hist = partition_histogram(spec, labels, class_count);
    std::vector<double> overall((std::size_t)class_count, 0.0);
    for (int l : labels) overall[(std::size_t)l] += 1.0;
    for (auto& v : overall) v /= (double)labels.size();

    double mean_stat = 0.0;
    for (int k = 0; k < spec.clients(); ++k) {
        const double n_k = (double)spec.client_counts[(std::size_t)k];
        double stat = 0.0;
        for (int c = 0; c < class_count; ++c) {
            const double expected = n_k * overall[(std::size_t)c];
            if (expected <= 0.0) continue;
            const double d = (double)hist[(std::size_t)k][(std::size_t)c] - expected;
            stat += d * d / expected;
        }
        mean_stat += stat;
    }
    return mean_stat / (double)spec.clients();
}

} // namespace fode
