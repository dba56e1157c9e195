#include "spme/monotone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spme {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

/**
 * Root of an increasing convex g on [lo, hi] with g(lo) <= 0 <= g(hi).
 *
 * Newton iterates started at hi decrease monotonically onto the root for
 * convex increasing g; the bracket is kept anyway and any step leaving it is
 * replaced by bisection.
 */
template <class G, class DG>
double bracketed_root(G g, DG dg, double lo, double hi, const YosidaParams& params) {
    double x = hi;
    for (int it = 0; it < params.max_bisection_iters; ++it) {
        const double gx = g(x);
        if (gx == 0.0) return x;
        if (gx > 0.0) {
            hi = x;
        } else {
            lo = x;
        }
        if (hi - lo <= 2.0 * kEps * hi) return 0.5 * (lo + hi);

        double next = x - gx / dg(x);
        if (!(next > lo && next < hi)) {
            next = 0.5 * (lo + hi);
            if (next <= lo || next >= hi) return x;
        } else if (std::abs(next - x) <= 2.0 * kEps * std::abs(x)) {
            return next;
        }
        x = next;
    }
    if (hi - lo <= params.scalar_solver_tol) return 0.5 * (lo + hi);
    throw ResolventError("scalar resolvent solve did not converge in " +
                         std::to_string(params.max_bisection_iters) +
                         " iterations (bracket width " + std::to_string(hi - lo) + ")");
}

// Solves y + c |y|^{m-1} y = a for a > 0 and returns s = y^m, which both the
// value psi_lambda = rho s and the derivative need.
double fast_diffusion_power(double a, double c, double m, const YosidaParams& params) {
    // With y = s^{1/m} the equation s^{1/m} + c s = a has a bounded derivative
    // at s = 0, unlike the y form where it blows up for m < 1.
    const double q = 1.0 / m;
    const double hi = std::min(a / c, std::pow(a, m));
    return bracketed_root([&](double s) { return std::pow(s, q) + c * s - a; },
                          [&](double s) { return s > 0.0 ? q * std::pow(s, q - 1.0) + c : c; },
                          0.0, hi, params);
}

double power_law_root(double a, double c, double m, const YosidaParams& params) {
    const double hi = std::min(a, std::pow(a / c, 1.0 / m));
    return bracketed_root([&](double y) { return y + c * std::pow(y, m) - a; },
                          [&](double y) {
                              return 1.0 + c * m * (y > 0.0 ? std::pow(y, m - 1.0) : (m == 1.0 ? 1.0 : 0.0));
                          },
                          0.0, hi, params);
}

void check_params(const YosidaParams& params, double r) {
    if (!(params.lambda > 0.0) || !std::isfinite(params.lambda)) {
        throw std::invalid_argument("Yosida parameter lambda must be positive and finite");
    }
    if (!std::isfinite(r)) {
        throw ResolventError("resolvent argument is not finite");
    }
}

struct Evaluation {
    double resolvent;
    double value;
    double derivative;
};

Evaluation evaluate(const MonotoneGraph& graph, const YosidaParams& params, double r) {
    check_params(params, r);
    const double lambda = params.lambda;
    const double sgn = r < 0.0 ? -1.0 : 1.0;
    const double a = std::abs(r);

    return std::visit(
        Overloaded{
            [&](const Linear& g) -> Evaluation {
                const double denom = 1.0 + lambda * g.slope;
                return {r / denom, g.slope * r / denom, g.slope / denom};
            },
            [&](const Sign& g) -> Evaluation {
                const double threshold = lambda * g.rho;
                if (a < threshold) return {0.0, r / lambda, 1.0 / lambda};
                if (a > threshold) return {sgn * (a - threshold), sgn * g.rho, 0.0};
                // Kink: central difference of the soft-threshold Yosida map.
                const double step = 1e-6 * std::max(1.0, a);
                const auto y = [&](double x) {
                    return std::abs(x) <= threshold ? x / lambda : (x < 0 ? -g.rho : g.rho);
                };
                const double fd = (y(r + step) - y(r - step)) / (2.0 * step);
                return {0.0, sgn * g.rho, std::clamp(fd, 0.0, 1.0 / lambda)};
            },
            [&](const FastDiffusion& g) -> Evaluation {
                if (a == 0.0) return {0.0, 0.0, 1.0 / lambda};
                const double s = fast_diffusion_power(a, lambda * g.rho, g.m, params);
                const double y = std::pow(s, 1.0 / g.m);
                // psi'(y) = rho m y^{m-1}, so psi_lambda' = 1 / (lambda + y^{1-m} / (rho m)).
                const double y_over_s = s > 0.0 ? y / s : 0.0;
                const double derivative = 1.0 / (lambda + y_over_s / (g.rho * g.m));
                return {sgn * y, sgn * g.rho * s, std::clamp(derivative, 0.0, 1.0 / lambda)};
            },
            [&](const PowerLaw& g) -> Evaluation {
                if (a == 0.0) {
                    const double slope = g.m == 1.0 ? g.rho : 0.0;
                    return {0.0, 0.0, slope / (1.0 + lambda * slope)};
                }
                const double y = power_law_root(a, lambda * g.rho, g.m, params);
                const double dpsi = g.rho * g.m * std::pow(y, g.m - 1.0);
                return {sgn * y, sgn * g.rho * std::pow(y, g.m),
                        std::clamp(dpsi / (1.0 + lambda * dpsi), 0.0, 1.0 / lambda)};
            },
        },
        graph.variant());
}

}  // namespace

MonotoneGraph MonotoneGraph::fast_diffusion(double rho, double m) {
    require(rho > 0.0 && std::isfinite(rho), "fast diffusion requires rho > 0");
    require(m > 0.0 && m < 1.0, "fast diffusion requires m in (0,1)");
    return MonotoneGraph(FastDiffusion{rho, m});
}

MonotoneGraph MonotoneGraph::sign(double rho) {
    require(rho > 0.0 && std::isfinite(rho), "sign graph requires rho > 0");
    return MonotoneGraph(Sign{rho});
}

MonotoneGraph MonotoneGraph::linear(double slope) {
    require(slope >= 0.0 && std::isfinite(slope), "linear graph requires slope >= 0");
    return MonotoneGraph(Linear{slope});
}

MonotoneGraph MonotoneGraph::power_law(double rho, double m) {
    require(rho > 0.0 && std::isfinite(rho), "power law requires rho > 0");
    require(m >= 1.0 && std::isfinite(m), "power law requires m >= 1");
    return MonotoneGraph(PowerLaw{rho, m});
}

std::string_view MonotoneGraph::kind() const {
    return std::visit(Overloaded{
                          [](const FastDiffusion&) { return std::string_view("fast_diffusion"); },
                          [](const Sign&) { return std::string_view("sign"); },
                          [](const Linear&) { return std::string_view("linear"); },
                          [](const PowerLaw&) { return std::string_view("power_law"); },
                      },
                      variant_);
}

double MonotoneGraph::minimal_section(double r) const {
    const double sgn = r < 0.0 ? -1.0 : 1.0;
    return std::visit(Overloaded{
                          [&](const FastDiffusion& g) { return r == 0.0 ? 0.0 : sgn * g.rho * std::pow(std::abs(r), g.m); },
                          [&](const Sign& g) { return r == 0.0 ? 0.0 : sgn * g.rho; },
                          [&](const Linear& g) { return g.slope * r; },
                          [&](const PowerLaw& g) { return r == 0.0 ? 0.0 : sgn * g.rho * std::pow(std::abs(r), g.m); },
                      },
                      variant_);
}

double MonotoneGraph::growth_constant() const {
    return std::visit(Overloaded{
                          [](const FastDiffusion& g) { return g.rho; },
                          [](const Sign& g) { return g.rho; },
                          [](const Linear& g) { return g.slope; },
                          [](const PowerLaw& g) { return g.rho; },
                      },
                      variant_);
}

double MonotoneGraph::growth_exponent() const {
    return std::visit(Overloaded{
                          [](const FastDiffusion& g) { return g.m; },
                          [](const Sign&) { return 0.0; },
                          [](const Linear&) { return 1.0; },
                          [](const PowerLaw& g) { return g.m; },
                      },
                      variant_);
}

double resolvent(const MonotoneGraph& graph, const YosidaParams& params, double r) {
    return evaluate(graph, params, r).resolvent;
}

double resolvent(const MonotoneGraph& graph, double lambda, double r) {
    return resolvent(graph, YosidaParams{lambda}, r);
}

double yosida(const MonotoneGraph& graph, const YosidaParams& params, double r) {
    return evaluate(graph, params, r).value;
}

double yosida(const MonotoneGraph& graph, double lambda, double r) {
    return yosida(graph, YosidaParams{lambda}, r);
}

double yosida_derivative(const MonotoneGraph& graph, const YosidaParams& params, double r) {
    return evaluate(graph, params, r).derivative;
}

double yosida_derivative(const MonotoneGraph& graph, double lambda, double r) {
    return yosida_derivative(graph, YosidaParams{lambda}, r);
}

YosidaValue yosida_with_derivative(const MonotoneGraph& graph, const YosidaParams& params,
                                   double r) {
    const auto e = evaluate(graph, params, r);
    return {e.value, e.derivative};
}

GrowthReport growth_check(const MonotoneGraph& graph, std::span<const double> lambdas,
                          std::span<const double> rs) {
    GrowthReport report{graph.growth_constant(), graph.growth_exponent(), 0.0, 0, 0};
    for (double lambda : lambdas) {
        for (double r : rs) {
            const double bound = 1.0 + std::pow(std::abs(r), report.exponent);
            const double ratio = std::abs(yosida(graph, lambda, r)) / bound;
            report.max_ratio = std::max(report.max_ratio, ratio);
            ++report.samples;
            if (ratio > report.constant) ++report.violations;
        }
    }
    return report;
}

}  // namespace spme
