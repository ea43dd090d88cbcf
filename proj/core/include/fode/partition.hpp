#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fode {

// Assignment of sample indices to K clients. Assignments are disjoint, cover
// the dataset exactly once, and every client holds at least one sample.
struct PartitionSpec {
    double alpha = 1.0;
    std::uint64_t seed = 0;
    std::vector<std::vector<int>> assignments; // per-client sample indices
    std::vector<long> client_counts;           // n_k, == assignments[k].size()

    int clients() const { return static_cast<int>(assignments.size()); }
    long total() const;
};

// Per-class Dirichlet split: for each class c, draw p_c ~ Dirichlet(alpha 1_K)
// and assign that class's sample indices to clients categorically by p_c.
// Each class uses its own RNG substream of (seed, class), so the draw for one
// class is independent of how many other classes exist. If any client ends up
// empty the whole partition is redrawn with seed+1, up to 100 attempts.
PartitionSpec dirichlet_partition(std::span<const int> labels, int clients, double alpha,
                                  std::uint64_t seed);

// Mean over clients of the class-uniformity chi-square statistic: for client
// k, sum_c (obs_kc - n_k * p_c)^2 / (n_k * p_c) where p_c is the overall
// class proportion. Larger means a more skewed partition.
double partition_chi_square(const PartitionSpec& spec, std::span<const int> labels,
                            int class_count);

// client x class count matrix.
std::vector<std::vector<long>> partition_histogram(const PartitionSpec& spec,
                                                   std::span<const int> labels, int class_count);

} // namespace fode
