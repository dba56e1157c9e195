#include "spme/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace spme {

namespace {

__extension__ typedef unsigned __int128 uint128;

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t hash_key(const StreamKey& key) {
    std::uint64_t h = mix64(key.seed + kGolden);
    h = mix64(h ^ (static_cast<std::uint64_t>(key.purpose) * kGolden));
    h = mix64(h ^ mix64(key.path_index + 0x632BE59BD9B4E019ULL));
    h = mix64(h ^ mix64(key.step_index + 0x8CB92BA72F3D8DD7ULL));
    return h;
}

}  // namespace

CounterRng::CounterRng(const StreamKey& key) : state_(hash_key(key)) {}

CounterRng::result_type CounterRng::operator()() {
    ++counter_;
    return mix64(state_ + counter_ * kGolden);
}

double CounterRng::uniform() {
    // 53 random bits, shifted off zero.
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double radius = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t CounterRng::below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("CounterRng::below requires bound > 0");
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = (*this)();
    uint128 m = static_cast<uint128>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            x = (*this)();
            m = static_cast<uint128>(x) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

std::vector<double> brownian_increments(const StreamKey& key, int n, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("Brownian increments need dt > 0");
    if (n < 0) throw std::invalid_argument("Brownian dimension must be non-negative");
    CounterRng rng(key);
    const double scale = std::sqrt(dt);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (double& x : out) x = scale * rng.normal();
    return out;
}

}  // namespace spme
