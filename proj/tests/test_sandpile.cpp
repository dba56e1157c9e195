#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "spme/sandpile.hpp"

using namespace spme;

namespace {

std::int64_t sum(std::span<const std::int64_t> v) {
    std::int64_t s = 0;
    for (auto x : v) s += x;
    return s;
}

}  // namespace

TEST(Sandpile, ConstructionChecks) {
    EXPECT_THROW(SandpileLattice(1), std::invalid_argument);
    EXPECT_THROW(SandpileLattice(4, 0), std::invalid_argument);
    EXPECT_THROW(SandpileLattice::from_heights(2, {1, 2, 3}), std::invalid_argument);
    const SandpileLattice empty(5);
    EXPECT_EQ(empty.site_count(), 25u);
    EXPECT_TRUE(empty.is_stable());
    EXPECT_EQ(empty.total(), 0);
}

TEST(Sandpile, StableLatticeIsUnchanged) {
    auto lattice = SandpileLattice::from_heights(3, {3, 2, 1, 0, 3, 3, 1, 1, 2});
    const std::vector<std::int64_t> before(lattice.heights().begin(), lattice.heights().end());
    EXPECT_EQ(lattice.apply_toppling(), 0);
    EXPECT_EQ(std::vector<std::int64_t>(lattice.heights().begin(), lattice.heights().end()), before);
    EXPECT_EQ(lattice.stabilize(), (AvalancheRecord{0, 0, 0}));
}

TEST(Sandpile, CenterToppleOnThreeByThree) {
    auto lattice = SandpileLattice::from_heights(3, {0, 0, 0, 0, 4, 0, 0, 0, 0});
    auto copy = lattice;
    EXPECT_EQ(copy.apply_toppling(), 1);
    EXPECT_EQ(std::vector<std::int64_t>(copy.heights().begin(), copy.heights().end()),
              (std::vector<std::int64_t>{0, 1, 0, 1, 0, 1, 0, 1, 0}));
    EXPECT_EQ(copy.grains_lost(), 0);
    EXPECT_EQ(lattice.stabilize(), (AvalancheRecord{1, 1, 0}));
    EXPECT_EQ(lattice.height(1, 1), 0);
    EXPECT_EQ(lattice.height(0, 1), 1);
}

TEST(Sandpile, FullTwoByTwo) {
    auto lattice = SandpileLattice::from_heights(2, {4, 4, 4, 4});
    const auto record = lattice.stabilize();
    EXPECT_EQ(record, (AvalancheRecord{4, 1, 8}));
    for (auto h : lattice.heights()) EXPECT_EQ(h, 2);
    EXPECT_EQ(lattice.grains_lost(), 8);
    EXPECT_TRUE(lattice.is_stable());
    EXPECT_TRUE(lattice.audit().exact());
}

TEST(Sandpile, ToppleAtExactlyCritical) {
    auto lattice = SandpileLattice::from_heights(2, {5, 0, 0, 0}, 5);
    EXPECT_EQ(lattice.stabilize().size, 1);
    EXPECT_EQ(lattice.height(0, 0), 1);
}

TEST(Sandpile, StencilMatchesDenseToppingMatrix) {
    oracle::Sampler s(61);
    for (int trial = 0; trial < 300; ++trial) {
        const int side = s.integer(2, 8);
        const int critical = s.integer(4, 6);
        std::vector<std::int64_t> x(static_cast<std::size_t>(side * side));
        for (auto& v : x) v = s.integer(0, 2 * critical);
        auto lattice = SandpileLattice::from_heights(side, x, critical);
        // Several consecutive rounds, each compared with the dense form.
        for (int round = 0; round < 5; ++round) {
            const auto expected = oracle::dense_toppling_update(side, x, critical);
            const std::int64_t before = lattice.total() + lattice.grains_lost();
            lattice.apply_toppling();
            x.assign(lattice.heights().begin(), lattice.heights().end());
            ASSERT_EQ(x, expected) << "side " << side << " round " << round;
            EXPECT_EQ(lattice.total() + lattice.grains_lost(), before);
        }
    }
}

TEST(Sandpile, StabilizeEqualsRepeatedDenseRounds) {
    oracle::Sampler s(62);
    for (int trial = 0; trial < 200; ++trial) {
        const int side = s.integer(2, 8);
        std::vector<std::int64_t> x(static_cast<std::size_t>(side * side));
        for (auto& v : x) v = s.integer(0, 7);
        auto lattice = SandpileLattice::from_heights(side, x);
        std::int64_t rounds = 0, size = 0;
        const std::int64_t start = sum(x);
        while (true) {
            std::int64_t unstable = 0;
            for (auto v : x) unstable += v >= 4;
            if (unstable == 0) break;
            size += unstable;
            ++rounds;
            x = oracle::dense_toppling_update(side, x, 4);
        }
        const auto record = lattice.stabilize();
        EXPECT_EQ(std::vector<std::int64_t>(lattice.heights().begin(), lattice.heights().end()), x);
        EXPECT_EQ(record.size, size);
        EXPECT_EQ(record.duration, rounds);
        EXPECT_EQ(record.dissipated, start - sum(x));
        EXPECT_GE(record.size, record.duration);
    }
}

TEST(Sandpile, DriveAndBounds) {
    SandpileLattice lattice(3);
    lattice.drive(lattice.index(2, 1));
    EXPECT_EQ(lattice.height(2, 1), 1);
    EXPECT_EQ(lattice.total(), 1);
    EXPECT_THROW(lattice.drive(9), std::out_of_range);
    for (int k = 0; k < 2; ++k) lattice.drive(0);
    const auto audit = lattice.audit();
    EXPECT_EQ(audit.driven, 3);
    EXPECT_EQ(audit.current_total, 3);
    EXPECT_TRUE(audit.exact());
}

TEST(Sandpile, RandomDrivesAreUniform) {
    SandpileLattice lattice(8);
    CounterRng rng(StreamKey{7, StreamPurpose::sandpile_drive});
    const int n = 100000;
    std::vector<int> counts(64, 0);
    for (int k = 0; k < n; ++k) ++counts[lattice.drive(rng)];
    const double p = 1.0 / 64;
    for (int c : counts) EXPECT_NEAR(c, n * p, 5 * std::sqrt(n * p * (1 - p)));
    EXPECT_EQ(lattice.total(), n);
}

TEST(Sandpile, StabilizeCapIsEnforced) {
    auto lattice = SandpileLattice::from_heights(4, std::vector<std::int64_t>(16, 200));
    EXPECT_THROW(lattice.stabilize(3), StabilizationError);
}

TEST(LogHistogram, BinsByPowersOfTwo) {
    const std::vector<std::int64_t> v{0, 0, 1, 2, 3, 4, 7, 8, 100};
    const auto bins = log_histogram(v);
    ASSERT_EQ(bins.size(), 8u);  // [0,1) [1,2) [2,4) [4,8) ... [64,128)
    EXPECT_EQ(bins[0].count, 2);
    EXPECT_EQ(bins[1].count, 1);
    EXPECT_EQ(bins[2].count, 2);
    EXPECT_EQ(bins[3].count, 2);
    EXPECT_EQ(bins[4].count, 1);
    EXPECT_EQ(bins[7].lo, 64);
    EXPECT_EQ(bins[7].hi, 128);
    EXPECT_EQ(bins[7].count, 1);
    std::int64_t total = 0;
    for (const auto& b : bins) total += b.count;
    EXPECT_EQ(total, 9);
    EXPECT_THROW(log_histogram(std::vector<std::int64_t>{-1}), std::invalid_argument);
}

TEST(Soc, SmallLatticeBelowThresholdIsQuiet) {
    const auto stats = run_soc(4, 4, 10, 3);
    // 10 grains on 16 sites cannot reach height 4 unless one site gets four drives.
    std::int64_t topplings = 0;
    for (const auto& a : stats.avalanches) topplings += a.size;
    EXPECT_EQ(stats.audit.driven, 10);
    EXPECT_TRUE(stats.audit.exact());
    if (topplings == 0) {
        EXPECT_EQ(stats.quiet_drives, 10);
    }
}

TEST(Soc, ConservationAndStabilityOverLongRun) {
    const auto stats = run_soc(16, 4, 20000, 5);
    EXPECT_TRUE(stats.audit.exact());
    EXPECT_TRUE(stats.always_stable_after);
    for (auto h : stats.final_heights) {
        EXPECT_GE(h, 0);
        EXPECT_LT(h, 4);
    }
    EXPECT_GE(stats.max_size, 16);
    std::int64_t lost = 0;
    for (const auto& a : stats.avalanches) {
        lost += a.dissipated;
        if (a.size > 0) {
            EXPECT_GE(a.size, a.duration);
        } else {
            EXPECT_EQ(a, (AvalancheRecord{0, 0, 0}));
        }
    }
    EXPECT_EQ(lost, stats.audit.lost);
}

TEST(Soc, DeterministicForSeed) {
    const auto a = run_soc(10, 4, 3000, 9);
    const auto b = run_soc(10, 4, 3000, 9);
    const auto c = run_soc(10, 4, 3000, 10);
    EXPECT_EQ(a.avalanches, b.avalanches);
    EXPECT_EQ(a.final_heights, b.final_heights);
    EXPECT_NE(a.final_heights, c.final_heights);
    EXPECT_THROW(run_soc(10, 4, 0, 1), std::invalid_argument);
}
