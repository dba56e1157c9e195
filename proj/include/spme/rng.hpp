#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace spme {

/// Purpose tag that separates random streams drawn from the same seed.
enum class StreamPurpose : std::uint64_t {
    brownian = 1,
    brownian_bridge = 2,
    sandpile_drive = 3,
    sobolev_search = 4,
    testing = 5,
};

struct StreamKey {
    std::uint64_t seed;
    StreamPurpose purpose;
    std::uint64_t path_index = 0;
    std::uint64_t step_index = 0;
};

/**
 * Counter-based generator: the k-th output is a SplitMix64 mix of
 * (hash(key) + k * golden). Any (seed, purpose, path, step) address can be
 * opened directly without advancing other streams, which is what keeps
 * coupled and parallel runs reproducible.
 */
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(const StreamKey& key);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();
    /// Uniform on the open interval (0, 1).
    double uniform();
    /// Standard normal (Box-Muller, both variates used).
    double normal();
    /// Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

private:
    std::uint64_t state_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// N independent N(0, dt) draws for one time step.
std::vector<double> brownian_increments(const StreamKey& key, int n, double dt);

}  // namespace spme
