#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fode/dataset.hpp"
#include "fode/partition.hpp"
#include "fode/rng.hpp"
#include "testutil.hpp"

using namespace fode;
namespace fs = std::filesystem;

namespace {

// Writes `records` CIFAR-format records with the given labels; pixel bytes
// are a deterministic ramp.
void write_fixture(const fs::path& file, const std::vector<int>& labels) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        out.put((char)labels[r]);
        for (int i = 0; i < 3072; ++i) out.put((char)((i + 7 * (int)r) % 251));
    }
}

fs::path fixture_dir() {
    const fs::path dir = fs::temp_directory_path() / "fode_cifar_fixture";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("cifar loader on constructed fixtures") {
    const fs::path dir = fixture_dir();
    for (int b = 1; b <= 5; ++b) {
        write_fixture(dir / ("data_batch_" + std::to_string(b) + ".bin"), {b % 10, (b + 3) % 10});
    }
    write_fixture(dir / "test_batch.bin", {9, 0, 4});

    auto [train, test] = load_cifar10(dir);
    CHECK(train.n() == 10);
    CHECK(test.n() == 3);
    CHECK(train.class_count == 10);
    CHECK(train.labels[0] == 1);
    CHECK(train.labels[1] == 4);
    CHECK(test.labels[0] == 9);
    CHECK(train.side() == 32);
    // test uses the train normalization constants
    CHECK(test.norm_mean == train.norm_mean);
    CHECK(test.norm_std == train.norm_std);
}

TEST_CASE("cifar loader rejects truncated files") {
    const fs::path dir = fixture_dir() / "trunc";
    fs::create_directories(dir);
    std::ofstream out(dir / "bad.bin", std::ios::binary | std::ios::trunc);
    for (int i = 0; i < 3072; ++i) out.put((char)i);
    out.close();
    CHECK_THROWS_WITH_AS(read_cifar_file(dir / "bad.bin"), doctest::Contains("truncated"),
                         DataError);
    CHECK_THROWS_WITH_AS(read_cifar_file(dir / "missing.bin"), doctest::Contains("cannot open"),
                         DataError);
}

TEST_CASE("cifar loader rejects label bytes above 9") {
    const fs::path dir = fixture_dir() / "badlabel";
    fs::create_directories(dir);
    write_fixture(dir / "bad.bin", {4, 11});
    CHECK_THROWS_WITH_AS(read_cifar_file(dir / "bad.bin"), doctest::Contains("label"), DataError);
}

TEST_CASE("real CIFAR-10 counts (runs only when FODE_CIFAR10_DIR is set)") {
    const char* dir = std::getenv("FODE_CIFAR10_DIR");
    if (!dir) return;
    auto [train, test] = load_cifar10(dir);
    CHECK(train.n() == 50000);
    CHECK(test.n() == 10000);
    std::map<int, int> per_class;
    for (int l : train.labels) ++per_class[l];
    for (const auto& [label, count] : per_class) {
        CAPTURE(label);
        CHECK(count == 5000);
    }
}

TEST_CASE("synthetic dataset determinism and structure") {
    SUBCASE("zero noise makes all samples of a class identical") {
        Dataset d = synth_dataset(3, 4, 8, 0.0f, 5);
        const long chw = 3 * 8 * 8;
        for (int c = 0; c < 3; ++c) {
            const float* first = d.images.data().data() + (long)(c * 4) * chw;
            for (int i = 1; i < 4; ++i) {
                const float* other = d.images.data().data() + ((long)(c * 4) + i) * chw;
                for (long j = 0; j < chw; ++j) CHECK(first[j] == other[j]);
            }
        }
    }
    SUBCASE("same seed twice is bit-identical") {
        Dataset a = synth_dataset(4, 6, 8, 0.3f, 11);
        Dataset b = synth_dataset(4, 6, 8, 0.3f, 11);
        CHECK(testutil::bitwise_equal(a.images.data(), b.images.data()));
        CHECK(a.labels == b.labels);
    }
    SUBCASE("balanced classes") {
        Dataset d = synth_dataset(5, 7, 8, 0.2f, 1);
        std::map<int, int> hist;
        for (int l : d.labels) ++hist[l];
        for (int c = 0; c < 5; ++c) CHECK(hist[c] == 7);
    }
}

TEST_CASE("nearest-prototype oracle separates the synthetic classes") {
    auto nearest_prototype_accuracy = [](const Dataset& d, int side) {
        // Prototypes normalized with the dataset's own constants.
        std::vector<std::vector<float>> protos;
        const long hw = (long)side * side;
        for (int c = 0; c < d.class_count; ++c) {
            auto p = synth_prototype(c, side);
            for (int ch = 0; ch < 3; ++ch) {
                for (long j = 0; j < hw; ++j) {
                    p[(std::size_t)(ch * hw + j)] =
                        (p[(std::size_t)(ch * hw + j)] - d.norm_mean[(std::size_t)ch]) /
                        d.norm_std[(std::size_t)ch];
                }
            }
            protos.push_back(std::move(p));
        }
        int correct = 0;
        const long chw = 3 * hw;
        for (int i = 0; i < d.n(); ++i) {
            const float* img = d.images.data().data() + (long)i * chw;
            int best = -1;
            double best_dist = 1e300;
            for (int c = 0; c < d.class_count; ++c) {
                double dist = 0.0;
                for (long j = 0; j < chw; ++j) {
                    const double diff = img[j] - protos[(std::size_t)c][(std::size_t)j];
                    dist += diff * diff;
                }
                if (dist < best_dist) {
                    best_dist = dist;
                    best = c;
                }
            }
            if (best == d.labels[(std::size_t)i]) ++correct;
        }
        return (double)correct / d.n();
    };

    Dataset clean = synth_dataset(10, 16, 8, 0.0f, 3);
    CHECK(nearest_prototype_accuracy(clean, 8) == 1.0);
    Dataset noisy = synth_dataset(10, 128, 8, 0.5f, 3);
    const double noisy_acc = nearest_prototype_accuracy(noisy, 8);
    CHECK(noisy_acc < 1.0);
    CHECK(noisy_acc > 0.5); // still far above chance
}

TEST_CASE("synth pair shares normalization constants and differs in noise") {
    auto [train, test] = synth_pair(4, 8, 8, 8, 0.25f, 21);
    CHECK(train.norm_mean == test.norm_mean);
    CHECK(train.norm_std == test.norm_std);
    CHECK_FALSE(testutil::bitwise_equal(train.images.data(), test.images.data()));
    CHECK(test.split == Dataset::Split::test);
}

TEST_CASE("binary export round-trips at the byte-quantization level") {
    Dataset d = synth_dataset(4, 3, 32, 0.2f, 9);
    const fs::path file = fixture_dir() / "export.bin";
    write_cifar_binary(d, file);
    RawImages raw = read_cifar_file(file);
    REQUIRE(raw.labels.size() == (std::size_t)d.n());
    CHECK(raw.labels == d.labels);
    // De-normalized pixel values round-trip within the 8-bit quantization.
    const long hw = 32 * 32;
    for (int i = 0; i < d.n(); ++i) {
        for (int c = 0; c < 3; ++c) {
            for (long j = 0; j < hw; ++j) {
                const float norm = d.images.data()[(std::size_t)(((long)i * 3 + c) * hw + j)];
                const float orig = norm * d.norm_std[(std::size_t)c] + d.norm_mean[(std::size_t)c];
                const float back =
                    (float)raw.pixels[(std::size_t)((long)i * 3072 + c * hw + j)] / 255.0f;
                REQUIRE(std::fabs(orig - back) <= 0.5f / 255.0f + 1e-6f);
            }
        }
    }
    CHECK_THROWS_AS(write_cifar_binary(synth_dataset(4, 2, 8, 0.1f, 1), file), DataError);
}

TEST_CASE("dirichlet partition basics") {
    std::vector<int> labels;
    for (int i = 0; i < 600; ++i) labels.push_back(i % 6);

    SUBCASE("K=1 collects every index") {
        PartitionSpec spec = dirichlet_partition(labels, 1, 0.5, 3);
        CHECK(spec.clients() == 1);
        CHECK(spec.client_counts[0] == 600);
        std::set<int> seen(spec.assignments[0].begin(), spec.assignments[0].end());
        CHECK(seen.size() == 600);
    }
    SUBCASE("disjoint cover for K=30, alpha=1") {
        PartitionSpec spec = dirichlet_partition(labels, 30, 1.0, 7);
        std::set<int> seen;
        long total = 0;
        for (int k = 0; k < spec.clients(); ++k) {
            CHECK((long)spec.assignments[(std::size_t)k].size() == spec.client_counts[(std::size_t)k]);
            CHECK(spec.client_counts[(std::size_t)k] >= 1);
            total += spec.client_counts[(std::size_t)k];
            for (int idx : spec.assignments[(std::size_t)k])

                CHECK(seen.insert(idx).second); // no duplicates anywhere
        }
        CHECK(total == 600);
        CHECK(seen.size() == 600);
    }
    SUBCASE("determinism") {
        PartitionSpec a = dirichlet_partition(labels, 10, 1.0, 5);
        PartitionSpec b = dirichlet_partition(labels, 10, 1.0, 5);
        CHECK(a.assignments == b.assignments);
    }
    SUBCASE("K > N errors") {
        std::vector<int> few{0, 1, 0};
        CHECK_THROWS_AS(dirichlet_partition(few, 4, 1.0, 1), DataError);
    }
}

TEST_CASE("dirichlet concentration controls skew (mini trend)") {
    std::vector<int> labels;
    for (int i = 0; i < 1000; ++i) labels.push_back(i % 10);
    double mean_low = 0.0, mean_high = 0.0;
    const int seeds = 10;
    for (std::uint64_t s = 0; s < (std::uint64_t)seeds; ++s) {
        mean_low += partition_chi_square(dirichlet_partition(labels, 8, 1.0, 1000 + s), labels, 10);
        mean_high += partition_chi_square(dirichlet_partition(labels, 8, 100.0, 1000 + s), labels, 10);
    }
    CHECK(mean_high / seeds < mean_low / seeds);
}

TEST_CASE("per-class draws are independent of the other classes") {
    // Two label arrays that agree on where class 0 lives but differ in the
    // other classes: class-0 indices must land on the same clients.
    std::vector<int> labels_a, labels_b;
    for (int i = 0; i < 300; ++i) {
        if (i % 3 == 0) {
            labels_a.push_back(0);
            labels_b.push_back(0);
        } else {
            labels_a.push_back(1 + i % 2);
            labels_b.push_back(3 + i % 4);
        }
    }
    PartitionSpec pa = dirichlet_partition(labels_a, 5, 0.7, 99);
    PartitionSpec pb = dirichlet_partition(labels_b, 5, 0.7, 99);
    auto owner_of = [](const PartitionSpec& p, int idx) {
        for (int k = 0; k < p.clients(); ++k) {
            for (int i : p.assignments[(std::size_t)k]) {
                if (i == idx) return k;
            }
        }
        return -1;
    };
    for (int i = 0; i < 300; i += 3) {
        REQUIRE(owner_of(pa, i) == owner_of(pb, i));
    }
}

TEST_CASE("batch index streams") {
    std::vector<int> indices{10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
    SUBCASE("sizes [3,3,3,1] with a kept short final batch") {
        auto batches = batch_indices(indices, 3, 1, 0);
        REQUIRE(batches.size() == 4);
        CHECK(batches[0].size() == 3);
        CHECK(batches[1].size() == 3);
        CHECK(batches[2].size() == 3);
        CHECK(batches[3].size() == 1);
    }
    SUBCASE("same (seed, epoch) gives the same order; epochs differ") {
        auto a = batch_indices(indices, 3, 7, 2);
        auto b = batch_indices(indices, 3, 7, 2);
        auto c = batch_indices(indices, 3, 7, 3);
        CHECK(a == b);
        CHECK(a != c);
    }
    SUBCASE("multiset of emitted indices equals the input") {
        auto batches = batch_indices(indices, 4, 3, 1);
        std::multiset<int> emitted;
        for (const auto& b : batches) emitted.insert(b.begin(), b.end());
        CHECK(emitted == std::multiset<int>(indices.begin(), indices.end()));
    }
    SUBCASE("empty indices error") {
        std::vector<int> empty;
        CHECK_THROWS_AS(batch_indices(empty, 3, 1, 0), DataError);
    }
    SUBCASE("gather materializes images in index order") {
        Dataset d = synth_dataset(3, 4, 8, 0.1f, 2);
        std::vector<int> idx{5, 0, 7};
        auto [images, labels] = gather(d, idx);
        CHECK(images.shape() == Shape{3, 3, 8, 8});
        CHECK(labels[0] == d.labels[5]);
        CHECK(labels[1] == d.labels[0]);
        CHECK(labels[2] == d.labels[7]);
    }
}

TEST_SUITE_END();
