#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace rgfs {

/// All randomness in the project flows from a single root seed through
/// derive_seed(root, {stream, a, b, ...}). Stream tags keep the episode
/// sampler, per-pass DropBlock draws, per-image block masks, parameter
/// init and the synthetic generator on independent, replayable streams.
enum class Stream : std::uint64_t {
    ParamInit = 1,
    ClassSplit = 2,
    EpisodeSample = 3,
    PassBase = 4,
    BlockMask = 5,
    SynthClass = 6,
    SynthSample = 7,
    EvalEpisode = 8,
    DropBlock = 9,
};

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Hash-combine a root seed with a path of stream/index components.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = root ^ 0xa0761d6478bd642fULL;
    splitmix64_next(s);
    for (std::uint64_t p : path) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        splitmix64_next(s);
    }
    return splitmix64_next(s);
}

inline std::uint64_t derive_seed(std::uint64_t root, Stream stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0) {
    return derive_seed(root, {static_cast<std::uint64_t>(stream), a, b, c});
}

/// Deterministic generator with hand-rolled distributions so results do not
/// depend on the standard library's <random> implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x6a09e667f3bcc909ULL) {
        // Warm up so trivially related seeds decorrelate.
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), n >= 1. Rejection keeps the draw unbiased.
    int uniform_int(int n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<int>(x % bound);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[i], v[static_cast<std::size_t>(j)]);
        }
    }

    /// k distinct values from [0, n), in draw order (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline std::vector<int> Rng::sample_without_replacement(int n, int k) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        int j = i + uniform_int(n - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace rgfs
