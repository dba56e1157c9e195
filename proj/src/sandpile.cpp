#include "spme/sandpile.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace spme {

SandpileLattice::SandpileLattice(int side, int critical)
    : SandpileLattice(side, critical,
                      std::vector<std::int64_t>(side >= 2 ? static_cast<std::size_t>(side) * static_cast<std::size_t>(side) : 0, 0)) {}

SandpileLattice::SandpileLattice(int side, int critical, std::vector<std::int64_t> heights)
    : side_(side), critical_(critical), heights_(std::move(heights)) {
    if (side < 2) throw std::invalid_argument("sandpile side must be at least 2");
    if (critical < 1) throw std::invalid_argument("sandpile critical height must be at least 1");
    if (heights_.size() != static_cast<std::size_t>(side) * static_cast<std::size_t>(side)) {
        throw std::invalid_argument("sandpile needs side^2 = " + std::to_string(side * side) +
                                    " heights, got " + std::to_string(heights_.size()));
    }
    initial_total_ = total();
    marked_.assign(heights_.size(), 0);
    pending_.resize(heights_.size());
    std::iota(pending_.begin(), pending_.end(), std::size_t{0});
}

SandpileLattice SandpileLattice::from_heights(int side, std::vector<std::int64_t> heights, int critical) {
    return SandpileLattice(side, critical, std::move(heights));
}

std::int64_t SandpileLattice::total() const {
    return std::accumulate(heights_.begin(), heights_.end(), std::int64_t{0});
}

bool SandpileLattice::is_stable() const {
    return std::all_of(heights_.begin(), heights_.end(), [&](std::int64_t x) { return x < critical_; });
}

ConservationAudit SandpileLattice::audit() const {
    return {initial_total_, driven_, total(), grains_lost_};
}

std::int64_t SandpileLattice::topple_sites(const std::vector<std::size_t>& sites) {
    const auto n = static_cast<std::size_t>(side_);
    for (std::size_t s : sites) {
        heights_[s] -= 4;
        const std::size_t row = s / n;
        const std::size_t col = s % n;
        if (row > 0) ++heights_[s - n]; else ++grains_lost_;
        if (row + 1 < n) ++heights_[s + n]; else ++grains_lost_;
        if (col > 0) ++heights_[s - 1]; else ++grains_lost_;
        if (col + 1 < n) ++heights_[s + 1]; else ++grains_lost_;
    }
    return static_cast<std::int64_t>(sites.size());
}

std::int64_t SandpileLattice::apply_toppling() {
    std::vector<std::size_t> unstable;
    for (std::size_t s = 0; s < heights_.size(); ++s) {
        if (heights_[s] >= critical_) unstable.push_back(s);
    }
    const auto toppled = topple_sites(unstable);
    pending_.resize(heights_.size());
    std::iota(pending_.begin(), pending_.end(), std::size_t{0});
    return toppled;
}

void SandpileLattice::drive(std::size_t site) {
    if (site >= heights_.size()) {
        throw std::out_of_range("sandpile site " + std::to_string(site) + " outside a lattice of " +
                                std::to_string(heights_.size()) + " sites");
    }
    ++heights_[site];
    ++driven_;
    pending_.push_back(site);
}

std::size_t SandpileLattice::drive(CounterRng& rng) {
    const auto site = static_cast<std::size_t>(rng.below(heights_.size()));
    drive(site);
    return site;
}

AvalancheRecord SandpileLattice::stabilize(std::int64_t max_rounds) {
    AvalancheRecord record;
    const std::int64_t lost_before = grains_lost_;
    const auto n = static_cast<std::size_t>(side_);

    // Only sites touched since the last stable state can be unstable; the
    // round's toppling set is fixed before any height changes.
    std::vector<std::size_t> candidates;
    candidates.swap(pending_);
    std::vector<std::size_t> unstable;
    while (true) {
        unstable.clear();
        for (std::size_t s : candidates) {
            if (!marked_[s] && heights_[s] >= critical_) {
                marked_[s] = 1;
                unstable.push_back(s);
            }
        }
        for (std::size_t s : unstable) marked_[s] = 0;
        if (unstable.empty()) break;
        if (record.duration == max_rounds) {
            throw StabilizationError("sandpile did not stabilize within " + std::to_string(max_rounds) +
                                     " rounds");
        }
        record.size += topple_sites(unstable);
        ++record.duration;

        candidates.clear();
        for (std::size_t s : unstable) {
            candidates.push_back(s);
            const std::size_t row = s / n;
            const std::size_t col = s % n;
            if (row > 0) candidates.push_back(s - n);
            if (row + 1 < n) candidates.push_back(s + n);
            if (col > 0) candidates.push_back(s - 1);
            if (col + 1 < n) candidates.push_back(s + 1);
        }
    }
    record.dissipated = grains_lost_ - lost_before;
    return record;
}

std::vector<LogBin> log_histogram(std::span<const std::int64_t> values) {
    std::vector<LogBin> bins{{0, 1, 0}};
    for (std::int64_t v : values) {
        if (v < 0) throw std::invalid_argument("log_histogram takes non-negative values");
        while (bins.back().hi <= v) {
            const std::int64_t lo = bins.back().hi;
            bins.push_back({lo, 2 * lo, 0});
        }
        std::size_t k = 0;
        if (v > 0) {
            k = 1;
            for (std::int64_t x = v; x > 1; x >>= 1) ++k;
        }
        ++bins[k].count;
    }
    return bins;
}

SocStatistics run_soc(int side, int critical, std::int64_t n_drives, std::uint64_t seed) {
    if (n_drives < 1) throw std::invalid_argument("run_soc requires n_drives >= 1");
    SandpileLattice lattice(side, critical);
    CounterRng rng(StreamKey{seed, StreamPurpose::sandpile_drive});
    SocStatistics stats;
    stats.n_drives = n_drives;
    stats.avalanches.reserve(static_cast<std::size_t>(n_drives));
    std::vector<std::int64_t> sizes, durations;
    sizes.reserve(static_cast<std::size_t>(n_drives));
    durations.reserve(static_cast<std::size_t>(n_drives));
    for (std::int64_t k = 0; k < n_drives; ++k) {
        lattice.drive(rng);
        const auto record = lattice.stabilize();
        stats.avalanches.push_back(record);
        sizes.push_back(record.size);
        durations.push_back(record.duration);
        stats.max_size = std::max(stats.max_size, record.size);
        stats.max_duration = std::max(stats.max_duration, record.duration);
        if (record.size == 0) ++stats.quiet_drives;
        if (record.size > 0 && !lattice.is_stable()) stats.always_stable_after = false;
    }
    stats.always_stable_after = stats.always_stable_after && lattice.is_stable();
    stats.size_histogram = log_histogram(sizes);
    stats.duration_histogram = log_histogram(durations);
    stats.audit = lattice.audit();
    stats.final_heights.assign(lattice.heights().begin(), lattice.heights().end());
    return stats;
}

}  // namespace spme
