#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace feddes {

// Deterministic seeded generator threaded through every stochastic operation.
// Distributions are implemented here (not via <random> distributions whose
// sequences are implementation-defined) so a seed pins the exact stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    // splitmix64 step
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Independent substream for a named unit of work (client id, fold id, ...).
    Rng derive(std::uint64_t stream) const {
        Rng r(state_ ^ (0x41c64e6dULL + stream * 0x2545f4914f6cdd1dULL));
        r.next_u64();
        return r;
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // standard normal, Box-Muller (spare discarded: one draw, two uniforms)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Gamma(shape, 1), Marsaglia-Tsang; boosted for shape < 1.
    double gamma(double shape) {
        if (shape < 1.0) {
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Symmetric Dirichlet(alpha) over n components; sums to 1 up to rounding.
    std::vector<double> dirichlet(double alpha, std::size_t n) {
        std::vector<double> g(n);
        double total = 0.0;
        for (auto& v : g) {
            v = gamma(alpha);
            total += v;
        }
        if (total <= 0.0) {
            for (auto& v : g) v = 1.0 / static_cast<double>(n);
            return g;
        }
        for (auto& v : g) v /= total;
        return g;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        shuffle(p);
        return p;
    }

private:
    std::uint64_t state_;
};

} // namespace feddes
