#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fode/tensor.hpp"

namespace fode {

// Immutable after construction; safe to share read-only across threads.
// Images are stored normalized; the constants are recorded so the train and
// test splits of one corpus use identical transforms.
struct Dataset {
    enum class Split { train, test };

    Tensor images; // [N,3,H,W], per-channel normalized
    std::vector<int> labels;
    int class_count = 0;
    Split split = Split::train;
    std::array<float, 3> norm_mean{0, 0, 0};
    std::array<float, 3> norm_std{1, 1, 1};

    int n() const { return static_cast<int>(labels.size()); }
    int side() const { return images.dim(2); }
};

// Loads the binary CIFAR-10 layout: data_batch_1..5.bin plus test_batch.bin,
// each a sequence of 3073-byte records (1 label byte, then 3072 pixel bytes,
// channel-major R/G/B planes, 32x32 row-major). Pixels are scaled to [0,1]
// and normalized with constants computed from the train split.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

// Reads one file of 3073-byte records into raw pixel/label arrays.
struct RawImages {
    std::vector<std::uint8_t> pixels; // N * 3072
    std::vector<int> labels;
};
RawImages read_cifar_file(const std::filesystem::path& file);

// Writes a dataset back out in the same record format (requires side == 32,
// 3 channels and class_count <= 10). Values are de-normalized and quantized
// to bytes, so the round trip is lossy at the 1/255 level.
void write_cifar_binary(const Dataset& dataset, const std::filesystem::path& file);

// The deterministic class prototype used by the synthetic dataset: a fixed
// geometric pattern with a per-class RGB tint, values in [0,1],
// length 3*side*side. Exposed so tests can run a nearest-prototype oracle.
std::vector<float> synth_prototype(int class_id, int side);

// Balanced synthetic dataset: per-class prototypes plus Gaussian pixel noise
// (clamped to [0,1]), normalized per channel with its own statistics.
// Deterministic in every argument.
Dataset synth_dataset(int class_count, int per_class, int side, float noise_sigma,
                      std::uint64_t seed);

// Train/test pair with disjoint noise streams; the test split reuses the
// train split's normalization constants.
std::pair<Dataset, Dataset> synth_pair(int class_count, int per_class_train, int per_class_test,
                                       int side, float noise_sigma, std::uint64_t seed);

// Deterministic epoch shuffle of `indices` by (seed, epoch), chopped into
// batches of size B; the final short batch is kept.
std::vector<std::vector<int>> batch_indices(std::span<const int> indices, int batch_size,
                                            std::uint64_t seed, int epoch);

// Gathers rows of the dataset into a fresh [B,3,H,W] tensor + labels.
std::pair<Tensor, std::vector<int>> gather(const Dataset& dataset, std::span<const int> indices);

// Mini-batch stream over a shard of a dataset.
class BatchStream {
public:
    BatchStream(const Dataset& dataset, std::span<const int> indices, int batch_size,
                std::uint64_t seed, int epoch);

    struct Batch {
        Tensor images;
        std::vector<int> labels;
    };

    std::optional<Batch> next();
    std::size_t batch_count() const { return batches_.size(); }

private:
    const Dataset& dataset_;
    std::vector<std::vector<int>> batches_;
    std::size_t cursor_ = 0;
};

} // namespace fode
