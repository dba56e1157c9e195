#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace spme {

/// psi(r) = rho |r|^{m-1} r with m in (0,1).
struct FastDiffusion {
    double rho;
    double m;
};

/// psi(r) = rho sign(r), multivalued [-rho, rho] at the origin.
struct Sign {
    double rho;
};

/// psi(r) = slope * r.
struct Linear {
    double slope;
};

/// psi(r) = rho |r|^{m-1} r with m >= 1 (slow diffusion).
struct PowerLaw {
    double rho;
    double m;
};

/**
 * Maximal monotone graph psi on the real line with 0 in psi(0).
 *
 * Multivaluedness is only ever seen through the resolvent, which is always
 * single-valued; no selection from psi(x) is materialized.
 */
class MonotoneGraph {
public:
    using Variant = std::variant<FastDiffusion, Sign, Linear, PowerLaw>;

    static MonotoneGraph fast_diffusion(double rho, double m);
    static MonotoneGraph sign(double rho);
    static MonotoneGraph linear(double slope);
    static MonotoneGraph power_law(double rho, double m);

    const Variant& variant() const { return variant_; }
    std::string_view kind() const;

    /// Minimal section psi°(r): the element of psi(r) closest to zero.
    double minimal_section(double r) const;

    /// Constant C and exponent m of the growth bound |psi(r)| <= C (1 + |r|^m).
    double growth_constant() const;
    double growth_exponent() const;

private:
    explicit MonotoneGraph(Variant v) : variant_(v) {}
    Variant variant_;
};

struct YosidaParams {
    double lambda;
    double scalar_solver_tol = 1e-14;
    int max_bisection_iters = 200;
};

class ResolventError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// J_lambda(r) = (I + lambda psi)^{-1} r.
double resolvent(const MonotoneGraph& graph, const YosidaParams& params, double r);
double resolvent(const MonotoneGraph& graph, double lambda, double r);

/// psi_lambda(r) = (r - J_lambda(r)) / lambda, evaluated as psi(J_lambda(r)) on
/// single-valued branches.
double yosida(const MonotoneGraph& graph, const YosidaParams& params, double r);
double yosida(const MonotoneGraph& graph, double lambda, double r);

/// d psi_lambda / dr, clamped to [0, 1/lambda].
double yosida_derivative(const MonotoneGraph& graph, const YosidaParams& params, double r);
double yosida_derivative(const MonotoneGraph& graph, double lambda, double r);

/// Value and derivative from a single resolvent evaluation.
struct YosidaValue {
    double value;
    double derivative;
};
YosidaValue yosida_with_derivative(const MonotoneGraph& graph, const YosidaParams& params,
                                   double r);

struct GrowthReport {
    double constant;      // C
    double exponent;      // m
    double max_ratio;     // max |psi_lambda(r)| / (1 + |r|^m)
    std::size_t samples;
    std::size_t violations;  // points where the ratio exceeds C
    bool passes() const { return violations == 0; }
};

/// Checks |psi_lambda(r)| <= C (1 + |r|^m) on every (lambda, r) pair of the grids.
GrowthReport growth_check(const MonotoneGraph& graph, std::span<const double> lambdas,
                          std::span<const double> rs);

}  // namespace spme
