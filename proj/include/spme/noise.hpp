#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "spme/grid.hpp"

namespace spme {

/// Polynomial in (xi_1, xi_2): sum_pq coeff[p][q] xi_1^p xi_2^q.
class Polynomial {
public:
    Polynomial() = default;
    /// Ascending coefficients in xi_1 only.
    static Polynomial univariate(std::vector<double> coefficients);
    /// coeff[p][q] multiplies xi_1^p xi_2^q.
    static Polynomial bivariate(std::vector<std::vector<double>> coefficients);

    double operator()(std::span<const double> xi) const;
    bool depends_on_second_axis() const;

private:
    std::vector<std::vector<double>> coeff_;
};

using ComponentFunction = std::function<double(std::span<const double>)>;

struct NoiseSupNorms {
    double a_sup[2][2] = {{0, 0}, {0, 0}};   // |A_kj|_inf
    double da_sup[2][2] = {{0, 0}, {0, 0}};  // |D_k A_kj|_inf
    double b_sup = 0.0;                      // sup_xi |b(xi)|_Frobenius
    double div_b_sup = 0.0;                  // sup_xi |(div b_j(xi))_j|
};

/**
 * The noise coefficients b_i (i < N) sampled on the closed grid, together
 * with A = b^T b, its axis derivatives and the sup norms entering the
 * admissibility constants. Immutable after build().
 */
class VectorFieldSet {
public:
    /// components[i][k] is the k-th Cartesian component of b_i.
    static VectorFieldSet build(const GridSpec& spec,
                                const std::vector<std::vector<ComponentFunction>>& components);
    static VectorFieldSet build(const GridSpec& spec,
                                const std::vector<std::vector<Polynomial>>& components);
    static VectorFieldSet none(const GridSpec& spec);

    const GridSpec& spec() const { return spec_; }
    int count() const { return count_; }
    bool is_zero() const;

    /// b_ik at a closed-grid node.
    double b(int i, int k, std::size_t closed_node) const {
        return b_[static_cast<std::size_t>(i * spec_.dimension() + k)][closed_node];
    }
    const TensorField& a() const { return a_; }
    /// D_k A_kj at a closed-grid node.
    double da(int k, int j, std::size_t closed_node) const {
        return da_[static_cast<std::size_t>(2 * k + j)][closed_node];
    }
    /// div b_i at a closed-grid node.
    double div_b(int i, std::size_t closed_node) const {
        return div_b_[static_cast<std::size_t>(i)][closed_node];
    }
    const NoiseSupNorms& sup_norms() const { return sup_; }

private:
    explicit VectorFieldSet(const GridSpec& spec) : spec_(spec), a_(spec) {}

    GridSpec spec_;
    int count_ = 0;
    std::vector<std::vector<double>> b_;
    TensorField a_;
    std::vector<std::vector<double>> da_;
    std::vector<std::vector<double>> div_b_;
    NoiseSupNorms sup_;
};

/// gamma(b) = max_kj |A_kj|_inf + |D_k A_kj|_inf.
double gamma_of_b(const VectorFieldSet& fields);

struct CtildeEstimate {
    double value = 0.0;       // sigma_max / gamma
    double sigma_max = 0.0;   // largest singular value of (-Lap)^{-1} div(A grad .)
    int iterations = 0;
    bool converged = true;
};

/// Operator-norm estimate of u -> (-Lap_h)^{-1} div(A grad u) on the discrete L^2,
/// normalized by gamma. Mesh-dependent by nature.
CtildeEstimate estimate_Ctilde(const GridOperators& grid, const VectorFieldSet& fields,
                               int max_iterations = 100, double relative_tolerance = 1e-8);

class AdmissibilityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct AdmissibilityReport {
    double gamma;
    double ctilde_estimate;
    bool ctilde_converged;
    double b_sup_sq;
    double nu;
    double lhs;   // Ctilde gamma + |b|_inf^2
    bool passes;  // lhs <= 2 nu
    double c1;    // nu - lhs / 2
    double c2;    // |(div b_j)_j|_inf^2
};

/// Evaluates the noise-viscosity condition Ctilde gamma(b) + |b|_inf^2 <= 2 nu.
/// Throws AdmissibilityError when nu <= 0 while noise is present.
AdmissibilityReport check_admissibility(double nu, const VectorFieldSet& fields,
                                        const GridOperators& grid);

/// Ito correction 0.5 div(b^T b grad u).
GridField stratonovich_correction(const GridOperators& grid, const VectorFieldSet& fields,
                                  const GridField& u);

/// sum_i (b_i . grad_h u) dW_i with centered differences.
GridField noise_increment(const GridOperators& grid, const VectorFieldSet& fields,
                          const GridField& u, std::span<const double> dw);

/// b_i . grad_h u (centered differences).
GridField transport_term(const GridOperators& grid, const VectorFieldSet& fields, int i,
                         const GridField& u);
/// div_h(b_i u) - (div b_i) u, the conservative rewriting of transport_term.
GridField conservative_transport_term(const GridOperators& grid, const VectorFieldSet& fields,
                                      int i, const GridField& u);

}  // namespace spme
