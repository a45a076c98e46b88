#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace shapecodec {

// PCG32 (Melissa O'Neill's pcg32_oneseq variant). Chosen over std engines so
// that generator state is two u64 words that serialize into checkpoints and
// behave identically on every platform.
struct Pcg32 {
    std::uint64_t state = 0x853c49e6748fea9bULL;
    std::uint64_t inc = 0xda3e39cb94b95bdbULL;

    Pcg32() = default;
    Pcg32(std::uint64_t seed, std::uint64_t stream = 1) { reseed(seed, stream); }

    void reseed(std::uint64_t seed, std::uint64_t stream = 1) {
        state = 0;
        inc = (stream << 1u) | 1u;
        next();
        state += seed;
        next();
    }

    std::uint32_t next() {
        std::uint64_t old = state;
        state = old * 6364136223846793005ULL + inc;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31u));
    }
};

// splitmix64, used to derive independent substream seeds from (seed, tags).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0x632be59bd9b4e019ULL * (c + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// Deterministic random stream: uniforms, normals (Box-Muller with cached
// spare), bounded ints. State is fully visible for checkpointing.
class RandomStream {
public:
    RandomStream() = default;
    explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 1) : gen_(seed, stream) {}

    // uniform in [0, 1)
    double uniform() {
        std::uint64_t hi = gen_.next();
        std::uint64_t lo = gen_.next();
        std::uint64_t bits = (hi << 21) ^ lo;  // 53 usable bits
        return static_cast<double>(bits & ((1ULL << 53) - 1)) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // uniform integer in [0, n)
    std::uint32_t uniform_int(std::uint32_t n) {
        // Lemire-style rejection to avoid modulo bias.
        std::uint64_t m = static_cast<std::uint64_t>(gen_.next()) * n;
        std::uint32_t low = static_cast<std::uint32_t>(m);
        if (low < n) {
            std::uint32_t threshold = (~n + 1u) % n;
            while (low < threshold) {
                m = static_cast<std::uint64_t>(gen_.next()) * n;
                low = static_cast<std::uint32_t>(m);
            }
        }
        return static_cast<std::uint32_t>(m >> 32);
    }

    struct State {
        std::uint64_t state;
        std::uint64_t inc;
        bool has_spare;
        double spare;
    };

    State save_state() const { return {gen_.state, gen_.inc, has_spare_, spare_}; }
    void restore_state(const State& s) {
        gen_.state = s.state;
        gen_.inc = s.inc;
        has_spare_ = s.has_spare;
        spare_ = s.spare;
    }

private:
    Pcg32 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace shapecodec
