#include "fode/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fode/rng.hpp"

namespace fode {

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPixels = 3 * kCifarSide * kCifarSide; // 3072
constexpr int kCifarRecord = kCifarPixels + 1;             // 3073

// Computes per-channel mean/std over raw [N,3,H,W] float data and applies
// (x - mean) / std in place. std is floored to avoid blowups on constant
// channels.
void normalize_with(std::vector<float>& data, long n, long chw, long hw,
                    const std::array<float, 3>& mean, const std::array<float, 3>& std_dev) {
    for (long i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            float* p = data.data() + i * chw + c * hw;
            const float m = mean[(std::size_t)c];
            const float s = std_dev[(std::size_t)c];
            for (long j = 0; j < hw; ++j) p[j] = (p[j] - m) / s;
        }
    }
}

std::pair<std::array<float, 3>, std::array<float, 3>> channel_moments(
    const std::vector<float>& data, long n, long chw, long hw) {
    std::array<float, 3> mean{}, std_dev{};
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long i = 0; i < n; ++i) {
            const float* p = data.data() + i * chw + c * hw;
            for (long j = 0; j < hw; ++j) acc += p[j];
        }
        const double m = acc / (double)(n * hw);
        double var = 0.0;
        for (long i = 0; i < n; ++i) {
            const float* p = data.data() + i * chw + c * hw;
            for (long j = 0; j < hw; ++j) {
                const double d = p[j] - m;
                var += d * d;
            }
        }
        var /= (double)(n * hw);
        mean[(std::size_t)c] = (float)m;
        std_dev[(std::size_t)c] = std::max((float)std::sqrt(var), 1e-6f);
    }
    return {mean, std_dev};
}

Dataset make_dataset(std::vector<float> data, std::vector<int> labels, int class_count, int side,
                     Dataset::Split split, const std::array<float, 3>& mean,
                     const std::array<float, 3>& std_dev) {
    const long n = (long)labels.size();
    Dataset d;
    d.images = Tensor::from({(int)n, 3, side, side}, std::move(data));
    d.labels = std::move(labels);
    d.class_count = class_count;
    d.split = split;
    d.norm_mean = mean;
    d.norm_std = std_dev;
    return d;
}

} // namespace

RawImages read_cifar_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file: " + file.string());
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0);
    if (size <= 0 || size % kCifarRecord != 0) {
        throw DataError("truncated dataset file " + file.string() + ": size " +
                        std::to_string((long long)size) + " is not a multiple of " +
                        std::to_string(kCifarRecord));
    }
    const long n = (long)(size / kCifarRecord);
    RawImages raw;
    raw.pixels.resize((std::size_t)n * kCifarPixels);
    raw.labels.resize((std::size_t)n);
    std::vector<char> record(kCifarRecord);
    for (long i = 0; i < n; ++i) {
        in.read(record.data(), kCifarRecord);
        if (!in) throw DataError("short read in dataset file " + file.string());
        const int label = (int)(unsigned char)record[0];
        if (label > 9) {
            throw DataError("invalid label byte " + std::to_string(label) + " in record " +
                            std::to_string(i) + " of " + file.string());
        }
        raw.labels[(std::size_t)i] = label;
        std::memcpy(raw.pixels.data() + (std::size_t)i * kCifarPixels, record.data() + 1, kCifarPixels);
    }
    return raw;
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
    std::vector<float> train_data;
    std::vector<int> train_labels;
    for (int b = 1; b <= 5; ++b) {
        RawImages raw = read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"));
        const std::size_t off = train_data.size();
        train_data.resize(off + raw.pixels.size());
        for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
            train_data[off + i] = (float)raw.pixels[i] / 255.0f;
        }
        train_labels.insert(train_labels.end(), raw.labels.begin(), raw.labels.end());
    }
    RawImages test_raw = read_cifar_file(dir / "test_batch.bin");
    std::vector<float> test_data(test_raw.pixels.size());
    for (std::size_t i = 0; i < test_raw.pixels.size(); ++i) {
        test_data[i] = (float)test_raw.pixels[i] / 255.0f;
    }

    const long hw = (long)kCifarSide * kCifarSide;
    const long chw = 3 * hw;
    auto [mean, std_dev] = channel_moments(train_data, (long)train_labels.size(), chw, hw);
    normalize_with(train_data, (long)train_labels.size(), chw, hw, mean, std_dev);
    normalize_with(test_data, (long)test_raw.labels.size(), chw, hw, mean, std_dev);

    Dataset train = make_dataset(std::move(train_data), std::move(train_labels), 10, kCifarSide,
                                 Dataset::Split::train, mean, std_dev);
    Dataset test = make_dataset(std::move(test_data), std::move(test_raw.labels), 10, kCifarSide,
                                Dataset::Split::test, mean, std_dev);
    return {std::move(train), std::move(test)};
}

void write_cifar_binary(const Dataset& dataset, const std::filesystem::path& file) {
    if (dataset.side() != kCifarSide || dataset.images.dim(1) != 3) {
        throw DataError("binary export requires 3x32x32 images, got " +
                        shape_str(dataset.images.shape()));
    }
    if (dataset.class_count > 10) {
        throw DataError("binary export requires class_count <= 10, got " +
                        std::to_string(dataset.class_count));
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + file.string());
    const long hw = (long)kCifarSide * kCifarSide;
    const float* img = dataset.images.data().data();
    std::vector<char> record(kCifarRecord);
    for (int i = 0; i < dataset.n(); ++i) {
        record[0] = (char)dataset.labels[(std::size_t)i];
        for (int c = 0; c < 3; ++c) {
            const float* p = img + ((long)i * 3 + c) * hw;
            const float m = dataset.norm_mean[(std::size_t)c];
            const float s = dataset.norm_std[(std::size_t)c];
            for (long j = 0; j < hw; ++j) {
                const float raw = std::clamp(p[j] * s + m, 0.0f, 1.0f);
                record[(std::size_t)(1 + c * hw + j)] = (char)(unsigned char)std::lround(raw * 255.0f);
            }
        }
        out.write(record.data(), kCifarRecord);
    }
    if (!out) throw DataError("short write to " + file.string());
}

std::vector<float> synth_prototype(int class_id, int side) {
    if (side < 8) throw DataError("synthetic side must be >= 8, got " + std::to_string(side));
    if (class_id < 0 || class_id > 9) {
        throw DataError("synthetic class id must be in [0,10), got " + std::to_string(class_id));
    }
    const long hw = (long)side * side;
    std::vector<float> proto((std::size_t)(3 * hw), 0.30f);

    // Fixed per-class RGB tint. Contrast against the 0.30 background is kept
    // moderate so heavy pixel noise (sigma ~0.5) genuinely blurs class
    // boundaries while clean data stays exactly separable.
    static constexpr float kTints[10][3] = {
        {0.75f, 0.48f, 0.48f}, {0.48f, 0.75f, 0.48f}, {0.48f, 0.48f, 0.75f},
        {0.72f, 0.72f, 0.45f}, {0.72f, 0.45f, 0.72f}, {0.45f, 0.72f, 0.72f},
        {0.70f, 0.60f, 0.45f}, {0.56f, 0.70f, 0.56f}, {0.62f, 0.53f, 0.70f},
        {0.68f, 0.68f, 0.68f}};

    const int mid = side / 2;
    const int band = std::max(1, side / 5);
    auto on = [&](int y, int x) -> bool {
        switch (class_id) {
            case 0: return std::abs(y - mid) < band;                     // horizontal bar
            case 1: return std::abs(x - mid) < band;                     // vertical bar
            case 2: return std::abs(y - x) < band;                       // main diagonal
            case 3: return std::abs(y + x - (side - 1)) < band;          // anti-diagonal
            case 4: {                                                    // centered disk
                const int dy = y - mid, dx = x - mid;
                return dy * dy + dx * dx <= (side * side) / 9;
            }
            case 5: return y < band || x < band || y >= side - band || x >= side - band; // frame
            case 6: return ((y / band) + (x / band)) % 2 == 0;           // checkerboard
            case 7: return y < mid && x < mid;                           // top-left quadrant
            case 8: return std::abs(y - side / 4) < band || std::abs(y - (3 * side) / 4) < band;
            case 9: return std::abs(y - mid) < band || std::abs(x - mid) < band; // cross
        }
        return false;
    };
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            if (!on(y, x)) continue;
            for (int c = 0; c < 3; ++c) {
                proto[(std::size_t)(c * hw + y * side + x)] = kTints[class_id][c];
            }
        }
    }
    return proto;
}

namespace {

Dataset synth_raw(int class_count, int per_class, int side, float noise_sigma, std::uint64_t seed,
                  Dataset::Split split) {
    if (class_count < 2 || class_count > 10) {
        throw DataError("synthetic class_count must be in [2,10], got " + std::to_string(class_count));
    }
    if (per_class < 1) throw DataError("synthetic per_class must be >= 1");
    if (side < 8) throw DataError("synthetic side must be >= 8, got " + std::to_string(side));
    if (noise_sigma < 0.0f) throw DataError("synthetic noise_sigma must be >= 0");

    const long hw = (long)side * side;
    const long chw = 3 * hw;
    const long n = (long)class_count * per_class;
    std::vector<float> data((std::size_t)(n * chw));
    std::vector<int> labels((std::size_t)n);

    Rng rng(mix_seed({seed, 0x5e7d47aULL}));
    long row = 0;
    for (int c = 0; c < class_count; ++c) {
        const std::vector<float> proto = synth_prototype(c, side);
        for (int i = 0; i < per_class; ++i, ++row) {
            labels[(std::size_t)row] = c;
            float* p = data.data() + row * chw;
            for (long j = 0; j < chw; ++j) {
                float v = proto[(std::size_t)j];
                if (noise_sigma > 0.0f) v += noise_sigma * (float)rng.normal();
                p[j] = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }

    auto [mean, std_dev] = channel_moments(data, n, chw, hw);
    normalize_with(data, n, chw, hw, mean, std_dev);
    return make_dataset(std::move(data), std::move(labels), class_count, side, split, mean, std_dev);
}

} // namespace

Dataset synth_dataset(int class_count, int per_class, int side, float noise_sigma,
                      std::uint64_t seed) {
    return synth_raw(class_count, per_class, side, noise_sigma, seed, Dataset::Split::train);
}

std::pair<Dataset, Dataset> synth_pair(int class_count, int per_class_train, int per_class_test,
                                       int side, float noise_sigma, std::uint64_t seed) {
    Dataset train = synth_raw(class_count, per_class_train, side, noise_sigma,
                              mix_seed({seed, 0x7e57ULL, 1ULL}), Dataset::Split::train);
    Dataset test = synth_raw(class_count, per_class_test, side, noise_sigma,
                             mix_seed({seed, 0x7e57ULL, 2ULL}), Dataset::Split::test);
    // Re-normalize the test split with the train constants so both use the
    // identical transform.
    const long hw = (long)side * side;
    std::vector<float> raw(test.images.data().begin(), test.images.data().end());
    for (long i = 0; i < test.n(); ++i) {
        for (int c = 0; c < 3; ++c) {
            float* p = raw.data() + (i * 3 + c) * hw;
            for (long j = 0; j < hw; ++j) {
                const float orig = p[j] * test.norm_std[(std::size_t)c] + test.norm_mean[(std::size_t)c];
                p[j] = (orig - train.norm_mean[(std::size_t)c]) / train.norm_std[(std::size_t)c];
            }
        }
    }
    test.images = Tensor::from(test.images.shape(), std::move(raw));
    test.norm_mean = train.norm_mean;
    test.norm_std = train.norm_std;
    return {std::move(train), std::move(test)};
}

std::vector<std::vector<int>> batch_indices(std::span<const int> indices, int batch_size,
                                            std::uint64_t seed, int epoch) {
    if (indices.empty()) throw DataError("batching requires a non-empty index list");
    if (batch_size < 1) throw DataError("batch size must be >= 1");
    std::vector<int> order(indices.begin(), indices.end());
    Rng rng(mix_seed({seed, 0xba7c4ULL, (std::uint64_t)epoch}));
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (std::size_t off = 0; off < order.size(); off += (std::size_t)batch_size) {
        const std::size_t end = std::min(order.size(), off + (std::size_t)batch_size);
        batches.emplace_back(order.begin() + (long)off, order.begin() + (long)end);
    }
    return batches;
}

std::pair<Tensor, std::vector<int>> gather(const Dataset& dataset, std::span<const int> indices) {
    const int side = dataset.side();
    const long chw = 3L * side * side;
    std::vector<float> data((std::size_t)((long)indices.size() * chw));
    std::vector<int> labels(indices.size());
    const float* src = dataset.images.data().data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= dataset.n()) {
            throw DataError("sample index " + std::to_string(idx) + " out of range [0," +
                            std::to_string(dataset.n()) + ")");
        }
        std::memcpy(data.data() + (long)i * chw, src + (long)idx * chw, (std::size_t)chw * sizeof(float));
        labels[i] = dataset.labels[(std::size_t)idx];
    }
    return {Tensor::from({(int)indices.size(), 3, side, side}, std::move(data)), std::move(labels)};
}

BatchStream::BatchStream(const Dataset& dataset, std::span<const int> indices, int batch_size,
                         std::uint64_t seed, int epoch)
    : dataset_(dataset), batches_(batch_indices(indices, batch_size, seed, epoch)) {}

std::optional<BatchStream::Batch> BatchStream::next() {
    if (cursor_ >= batches_.size()) return std::nullopt;
    const auto& idx = batches_[cursor_++];
    auto [images, labels] = gather(dataset_, idx);
    return Batch{std::move(images), std::move(labels)};
}

} // namespace fode
