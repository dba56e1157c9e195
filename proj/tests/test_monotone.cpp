#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "spme/monotone.hpp"

using namespace spme;

namespace {

std::function<double(double)> sign_selection(double rho) {
    // Any selection works for bisection since the root never sits on the jump.
    return [=](double y) { return y > 0 ? rho : (y < 0 ? -rho : 0.0); };
}

MonotoneGraph random_graph(oracle::Sampler& s, std::function<double(double)>& psi) {
    const int kind = s.integer(0, 3);
    const double rho = s.uniform(0.1, 5.0);
    switch (kind) {
        case 0: {
            const double m = s.uniform(0.05, 0.95);
            psi = oracle::fast_diffusion(rho, m);
            return MonotoneGraph::fast_diffusion(rho, m);
        }
        case 1:
            psi = sign_selection(rho);
            return MonotoneGraph::sign(rho);
        case 2:
            psi = [=](double y) { return rho * y; };
            return MonotoneGraph::linear(rho);
        default: {
            const double m = s.uniform(1.0, 4.0);
            psi = oracle::fast_diffusion(rho, m);
            return MonotoneGraph::power_law(rho, m);
        }
    }
}

}  // namespace

TEST(Resolvent, FastDiffusionKnownRoot) {
    const auto g = MonotoneGraph::fast_diffusion(1.0, 0.5);
    EXPECT_NEAR(resolvent(g, 1.0, 2.0), 1.0, 1e-14);
    EXPECT_NEAR(resolvent(g, 1.0, -2.0), -1.0, 1e-14);
    EXPECT_NEAR(yosida(g, 1.0, 2.0), 1.0, 1e-14);
}

TEST(Resolvent, SignSoftThreshold) {
    const auto g = MonotoneGraph::sign(1.0);
    EXPECT_EQ(resolvent(g, 0.5, 0.3), 0.0);
    EXPECT_NEAR(resolvent(g, 0.5, 2.0), 1.5, 1e-15);
    EXPECT_NEAR(resolvent(g, 0.5, -2.0), -1.5, 1e-15);
    EXPECT_NEAR(yosida(g, 0.5, 0.3), 0.6, 1e-15);
    EXPECT_NEAR(yosida(g, 0.5, 2.0), 1.0, 1e-15);
}

TEST(Resolvent, LinearClosedForm) {
    const auto g = MonotoneGraph::linear(3.0);
    EXPECT_NEAR(resolvent(g, 0.5, 5.0), 5.0 / 2.5, 1e-15);
    EXPECT_NEAR(yosida(g, 0.5, 5.0), 3.0 * 5.0 / 2.5, 1e-14);
    EXPECT_NEAR(yosida_derivative(g, 0.5, 5.0), 3.0 / 2.5, 1e-15);
}

TEST(Resolvent, PowerLawUnitExponentIsLinear) {
    const auto p = MonotoneGraph::power_law(2.0, 1.0);
    const auto l = MonotoneGraph::linear(2.0);
    for (double r : {-3.0, -0.1, 0.0, 0.7, 12.0}) {
        EXPECT_NEAR(resolvent(p, 0.3, r), resolvent(l, 0.3, r), 1e-13);
        EXPECT_NEAR(yosida_derivative(p, 0.3, r), yosida_derivative(l, 0.3, r), 1e-12);
    }
}

TEST(Resolvent, ZeroIsFixed) {
    for (const auto& g : {MonotoneGraph::fast_diffusion(2.0, 0.3), MonotoneGraph::sign(1.0),
                          MonotoneGraph::linear(1.0), MonotoneGraph::power_law(1.0, 2.0)}) {
        EXPECT_EQ(resolvent(g, 0.1, 0.0), 0.0) << g.kind();
        EXPECT_EQ(yosida(g, 0.1, 0.0), 0.0) << g.kind();
    }
}

TEST(Resolvent, InvalidInputs) {
    const auto g = MonotoneGraph::fast_diffusion(1.0, 0.5);
    EXPECT_THROW(resolvent(g, 0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(resolvent(g, -1.0, 1.0), std::invalid_argument);
    EXPECT_THROW(resolvent(g, 1.0, std::numeric_limits<double>::quiet_NaN()), ResolventError);
    EXPECT_THROW(resolvent(g, 1.0, INFINITY), ResolventError);
}

TEST(Graph, ConstructorsRejectOutOfRangeParameters) {
    EXPECT_THROW(MonotoneGraph::fast_diffusion(1.0, 1.0), std::invalid_argument);
    EXPECT_THROW(MonotoneGraph::fast_diffusion(1.0, 0.0), std::invalid_argument);
    EXPECT_THROW(MonotoneGraph::fast_diffusion(0.0, 0.5), std::invalid_argument);
    EXPECT_THROW(MonotoneGraph::sign(-1.0), std::invalid_argument);
    EXPECT_THROW(MonotoneGraph::linear(-0.1), std::invalid_argument);
    EXPECT_THROW(MonotoneGraph::power_law(1.0, 0.5), std::invalid_argument);
}

TEST(Graph, MinimalSectionAndGrowth) {
    const auto s = MonotoneGraph::sign(2.0);
    EXPECT_EQ(s.minimal_section(0.0), 0.0);
    EXPECT_EQ(s.minimal_section(-1e-30), -2.0);
    EXPECT_EQ(s.growth_exponent(), 0.0);
    const auto f = MonotoneGraph::fast_diffusion(3.0, 0.25);
    EXPECT_NEAR(f.minimal_section(16.0), 6.0, 1e-14);
    EXPECT_EQ(f.growth_constant(), 3.0);
    EXPECT_EQ(f.growth_exponent(), 0.25);
    EXPECT_EQ(f.kind(), "fast_diffusion");
}

TEST(ResolventProperty, MatchesBisectionOracle) {
    oracle::Sampler s(21);
    for (int trial = 0; trial < 2000; ++trial) {
        std::function<double(double)> psi;
        const auto g = random_graph(s, psi);
        const double lambda = std::pow(10.0, s.uniform(-4.0, 1.0));
        const double r = std::pow(10.0, s.uniform(-6.0, 3.0)) * (s.integer(0, 1) ? 1.0 : -1.0);
        const double expected = oracle::bisection_resolvent(psi, lambda, r);
        const double got = resolvent(g, lambda, r);
        EXPECT_NEAR(got, expected, 1e-12 * std::max(1.0, std::abs(r)))
            << g.kind() << " lambda=" << lambda << " r=" << r;
    }
}

TEST(ResolventProperty, NonexpansiveAndMonotone) {
    oracle::Sampler s(22);
    for (int trial = 0; trial < 2000; ++trial) {
        std::function<double(double)> psi;
        const auto g = random_graph(s, psi);
        const double lambda = std::pow(10.0, s.uniform(-3.0, 0.5));
        const double a = s.uniform(-10.0, 10.0);
        const double b = s.uniform(-10.0, 10.0);
        const double ja = resolvent(g, lambda, a);
        const double jb = resolvent(g, lambda, b);
        EXPECT_LE(std::abs(ja - jb), std::abs(a - b) * (1 + 1e-12) + 1e-13);
        if (a <= b) {
            EXPECT_LE(ja, jb + 1e-13);
        }
        const double ya = yosida(g, lambda, a);
        const double yb = yosida(g, lambda, b);
        EXPECT_LE(std::abs(ya - yb), std::abs(a - b) / lambda * (1 + 1e-9) + 1e-10);
        if (a <= b) {
            EXPECT_LE(ya, yb + 1e-10);
        }
    }
}

TEST(ResolventProperty, YosidaBelowMinimalSection) {
    oracle::Sampler s(23);
    for (int trial = 0; trial < 1000; ++trial) {
        std::function<double(double)> psi;
        const auto g = random_graph(s, psi);
        const double lambda = std::pow(10.0, s.uniform(-3.0, 0.5));
        const double r = s.uniform(-20.0, 20.0);
        EXPECT_LE(std::abs(yosida(g, lambda, r)), std::abs(g.minimal_section(r)) * (1 + 1e-12) + 1e-14);
        // psi_lambda(r) = (r - J_lambda(r)) / lambda
        const double j = resolvent(g, lambda, r);
        EXPECT_NEAR(yosida(g, lambda, r), (r - j) / lambda, 1e-9 * (1 + std::abs(r) / lambda));
    }
}

TEST(ResolventProperty, DerivativeMatchesFiniteDifference) {
    oracle::Sampler s(24);
    for (int trial = 0; trial < 1000; ++trial) {
        std::function<double(double)> psi;
        const auto g = random_graph(s, psi);
        const double lambda = std::pow(10.0, s.uniform(-2.0, 0.5));
        double r = s.uniform(-5.0, 5.0);
        if (std::abs(r) < 1e-3) r = 0.5;
        if (g.kind() == "sign" && std::abs(std::abs(r) - lambda * g.growth_constant()) < 1e-3) continue;
        const double step = 1e-6;
        const double fd = (yosida(g, lambda, r + step) - yosida(g, lambda, r - step)) / (2 * step);
        const auto both = yosida_with_derivative(g, YosidaParams{lambda}, r);
        EXPECT_NEAR(both.derivative, fd, 1e-4 * (1.0 + std::abs(fd))) << g.kind() << " r=" << r;
        EXPECT_NEAR(both.value, yosida(g, lambda, r), 1e-15 * (1 + std::abs(both.value)));
        EXPECT_GE(both.derivative, 0.0);
        EXPECT_LE(both.derivative, 1.0 / lambda * (1 + 1e-12));
    }
}

TEST(ResolventProperty, FastDiffusionNearZeroAndLarge) {
    const auto g = MonotoneGraph::fast_diffusion(1.0, 0.1);
    for (double r : {1e-300, 1e-200, 1e-30, 1e-8, 1e8, 1e100}) {
        for (double lambda : {1e-6, 1e-2, 10.0}) {
            const double j = resolvent(g, lambda, r);
            ASSERT_TRUE(std::isfinite(j));
            EXPECT_GE(j, 0.0);
            EXPECT_LE(j, r);
            if (j == 0.0) {
                // The root (r / lambda)^10 is below the smallest double.
                EXPECT_LT(std::log10(r / lambda) * 10, -307.0) << "r=" << r << " lambda=" << lambda;
                continue;
            }
            const double residual = j + lambda * std::pow(j, 0.1) - r;
            EXPECT_LE(std::abs(residual), 1e-12 * r) << "r=" << r << " lambda=" << lambda;
        }
    }
}

TEST(Growth, YosidaRespectsGrowthBound) {
    const std::vector<double> lambdas{1e-4, 1e-2, 1.0};
    std::vector<double> rs;
    for (int k = -40; k <= 40; ++k) rs.push_back(std::sinh(k * 0.25));
    for (const auto& g : {MonotoneGraph::fast_diffusion(2.0, 0.5), MonotoneGraph::sign(1.5),
                          MonotoneGraph::linear(0.7), MonotoneGraph::power_law(1.0, 3.0)}) {
        const auto report = growth_check(g, lambdas, rs);
        EXPECT_TRUE(report.passes()) << g.kind() << " max ratio " << report.max_ratio;
        EXPECT_EQ(report.samples, lambdas.size() * rs.size());
        EXPECT_LE(report.max_ratio, g.growth_constant() * (1 + 1e-12));
    }
}
