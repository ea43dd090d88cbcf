#include "fode/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace fode {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
    std::uint64_t h = 0x6f0e8caf3b7a115dULL;
    for (std::uint64_t w : words) {
        h = splitmix64(h ^ splitmix64(w));
    }
    return h;
}

double Rng::uniform() {
    // 53 random bits -> [0, 1).
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

float Rng::uniform_f(float lo, float hi) {
    return static_cast<float>(uniform(lo, hi));
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be > 0");
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

double Rng::gamma(double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("gamma: alpha must be > 0");
    if (alpha < 1.0) {
        // Boost to alpha+1 and correct with U^(1/alpha).
        double u;
        do {
            u = uniform();
        } while (u <= 1e-300);
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v;
        if (u > 1e-300 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> Rng::dirichlet(double alpha, int k) {
    std::vector<double> p(static_cast<std::size_t>(k));
    double sum = 0.0;
    do {
        sum = 0.0;
        for (auto& v : p) {
            v = gamma(alpha);
            sum += v;
        }
    } while (sum <= 0.0); // all-underflow redraw for very small alpha
    for (auto& v : p) v /= sum;
    return p;
}

int Rng::categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    double x = uniform() * total;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        x -= probs[i];
        if (x < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

} // namespace fode
