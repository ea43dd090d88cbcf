#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fode {

// Mixes an arbitrary list of 64-bit words into one seed (splitmix64 finalizer
// applied per word). Used to derive independent, order-insensitive RNG
// substreams, e.g. mix_seed({run_seed, client_id, round}).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words);

// Deterministic random source. std::mt19937_64 output is pinned by the
// standard; all distributions below are hand-rolled on top of it so results
// are identical across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    float uniform_f(float lo, float hi);

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);

    // Standard normal via Box-Muller.
    double normal();

    // Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha > 0.
    double gamma(double alpha);

    // Dirichlet(alpha * 1_k) as normalized gamma draws.
    std::vector<double> dirichlet(double alpha, int k);

    // Index draw from an unnormalized weight vector.
    int categorical(std::span<const double> probs);

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace fode
