#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace offrl {

/// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Identifies one random stream: (master seed, experiment id, trial id).
/// A stream's output depends only on this triple, so scheduling trials on
/// different workers never changes results.
struct StreamId {
    std::uint64_t master_seed = 0;
    std::uint64_t experiment = 0;
    std::uint64_t trial = 0;

    std::uint64_t derive_seed() const noexcept {
        return mix64(mix64(mix64(master_seed) ^ experiment) ^ (trial * 0xd1b54a32d192ed03ULL));
    }
};

/// Exclusively owned random stream. Not thread safe; give each worker its own.
class RandomStream {
public:
    explicit RandomStream(StreamId id) : id_(id), engine_(id.derive_seed()) {}
    explicit RandomStream(std::uint64_t seed) : RandomStream(StreamId{seed, 0, 0}) {}

    const StreamId& id() const noexcept { return id_; }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1].
    double uniform_open_closed() noexcept { return 1.0 - uniform(); }

    /// Draws an index from a probability vector summing to one.
    std::size_t categorical(std::span<const double> probs) noexcept {
        const double u = uniform();
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] <= 0.0) continue;
            acc += probs[i];
            last_positive = i;
            if (u < acc) return i;
        }
        // Rounding leftover: the cumulative sum fell just short of 1.
        return last_positive;
    }

    /// Number of Bernoulli(p) trials up to and including the first success.
    std::uint64_t geometric_trials(double p) noexcept {
        if (p >= 1.0) return 1;
        const double u = uniform_open_closed();
        const double k = std::ceil(std::log(u) / std::log1p(-p));
        return k < 1.0 ? 1 : static_cast<std::uint64_t>(k);
    }

    std::uint64_t next_u64() noexcept { return engine_(); }

    /// Underlying engine, for use with <random> distributions.
    std::mt19937_64& engine() noexcept { return engine_; }

private:
    StreamId id_;
    std::mt19937_64 engine_;
};

}  // namespace offrl
