#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "spme/rng.hpp"

namespace spme {

struct AvalancheRecord {
    std::int64_t size = 0;        // site topplings
    std::int64_t duration = 0;    // synchronous rounds
    std::int64_t dissipated = 0;  // grains lost across the boundary

    friend bool operator==(const AvalancheRecord&, const AvalancheRecord&) = default;
};

struct ConservationAudit {
    std::int64_t initial_total = 0;
    std::int64_t driven = 0;
    std::int64_t current_total = 0;
    std::int64_t lost = 0;
    bool exact() const { return initial_total + driven == current_total + lost; }
};

class StabilizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * side x side sandpile with open boundary and synchronous toppling: every
 * site with height >= critical loses 4, each nearest neighbour gains 1 and
 * grains leaving the lattice are counted as lost. Heights are row-major.
 */
class SandpileLattice {
public:
    explicit SandpileLattice(int side, int critical = 4);
    static SandpileLattice from_heights(int side, std::vector<std::int64_t> heights, int critical = 4);

    int side() const { return side_; }
    int critical() const { return critical_; }
    std::size_t site_count() const { return heights_.size(); }
    std::span<const std::int64_t> heights() const { return heights_; }
    std::int64_t height(int row, int col) const { return heights_[index(row, col)]; }
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(side_) + static_cast<std::size_t>(col);
    }

    std::int64_t total() const;
    std::int64_t grains_lost() const { return grains_lost_; }
    bool is_stable() const;
    ConservationAudit audit() const;

    /// One synchronous round over the whole lattice; returns the number of toppled sites.
    std::int64_t apply_toppling();
    void drive(std::size_t site);
    /// Drives a uniformly chosen site and returns it.
    std::size_t drive(CounterRng& rng);
    /// Topples until stable. Throws StabilizationError past max_rounds.
    AvalancheRecord stabilize(std::int64_t max_rounds = 10'000'000);

private:
    SandpileLattice(int side, int critical, std::vector<std::int64_t> heights);
    std::int64_t topple_sites(const std::vector<std::size_t>& sites);

    int side_;
    int critical_;
    std::vector<std::int64_t> heights_;
    std::int64_t grains_lost_ = 0;
    std::int64_t initial_total_ = 0;
    std::int64_t driven_ = 0;
    std::vector<std::size_t> pending_;  // sites that may have become unstable
    std::vector<char> marked_;
};

struct LogBin {
    std::int64_t lo;
    std::int64_t hi;  // exclusive
    std::int64_t count;
};

/// Bins [0,1), [1,2), [2,4), [4,8), ... up to the largest value present.
std::vector<LogBin> log_histogram(std::span<const std::int64_t> values);

struct SocStatistics {
    std::int64_t n_drives = 0;
    std::vector<AvalancheRecord> avalanches;
    std::vector<LogBin> size_histogram;
    std::vector<LogBin> duration_histogram;
    std::int64_t max_size = 0;
    std::int64_t max_duration = 0;
    std::int64_t quiet_drives = 0;  // drives with no toppling
    bool always_stable_after = true;
    ConservationAudit audit;
    std::vector<std::int64_t> final_heights;
};

/// Drive-stabilize loop from an empty lattice; drives come from the
/// (seed, sandpile_drive) stream.
SocStatistics run_soc(int side, int critical, std::int64_t n_drives, std::uint64_t seed);

}  // namespace spme
