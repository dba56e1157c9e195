#include "spme/noise.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spme/rng.hpp"

namespace spme {

namespace {

// Derivative along `axis` of closed-grid samples: centered in the interior,
// one-sided second order on the boundary nodes.
std::vector<double> closed_derivative(const GridSpec& spec, const std::vector<double>& f, int axis) {
    const int m = spec.n() + 2;
    const double inv_2h = 0.5 / spec.h();
    const int jmax = spec.dimension() == 1 ? 1 : m;
    std::vector<double> out(f.size(), 0.0);
    for (int j = 0; j < jmax; ++j) {
        for (int i = 0; i < m; ++i) {
            const auto at = [&](int a) {
                return axis == 0 ? f[spec.closed_index(a, j)] : f[spec.closed_index(i, a)];
            };
            const int pos = axis == 0 ? i : j;
            double value;
            if (pos == 0) {
                value = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv_2h;
            } else if (pos == m - 1) {
                value = (3.0 * at(m - 1) - 4.0 * at(m - 2) + at(m - 3)) * inv_2h;
            } else {
                value = (at(pos + 1) - at(pos - 1)) * inv_2h;
            }
            out[spec.closed_index(i, j)] = value;
        }
    }
    return out;
}

double sup_abs(const std::vector<double>& v) {
    double worst = 0.0;
    for (double x : v) worst = std::max(worst, std::abs(x));
    return worst;
}

std::size_t closed_node_of(const GridSpec& spec, std::size_t p) {
    const auto pos = spec.position(p);
    return spec.closed_index(pos[0], pos[1]);
}

}  // namespace

// ---------------------------------------------------------------------------
// Polynomial

Polynomial Polynomial::univariate(std::vector<double> coefficients) {
    Polynomial p;
    for (double c : coefficients) p.coeff_.push_back({c});
    return p;
}

Polynomial Polynomial::bivariate(std::vector<std::vector<double>> coefficients) {
    Polynomial p;
    p.coeff_ = std::move(coefficients);
    return p;
}

double Polynomial::operator()(std::span<const double> xi) const {
    const double x = xi.empty() ? 0.0 : xi[0];
    const double y = xi.size() > 1 ? xi[1] : 0.0;
    // Horner in xi_1 over rows that are themselves Horner polynomials in xi_2.
    double total = 0.0;
    for (auto row = coeff_.rbegin(); row != coeff_.rend(); ++row) {
        double inner = 0.0;
        for (auto c = row->rbegin(); c != row->rend(); ++c) inner = inner * y + *c;
        total = total * x + inner;
    }
    return total;
}

bool Polynomial::depends_on_second_axis() const {
    for (const auto& row : coeff_) {
        for (std::size_t q = 1; q < row.size(); ++q) {
            if (row[q] != 0.0) return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// VectorFieldSet

VectorFieldSet VectorFieldSet::none(const GridSpec& spec) {
    return build(spec, std::vector<std::vector<ComponentFunction>>{});
}

VectorFieldSet VectorFieldSet::build(const GridSpec& spec,
                                     const std::vector<std::vector<Polynomial>>& components) {
    std::vector<std::vector<ComponentFunction>> fns;
    for (const auto& field : components) {
        auto& row = fns.emplace_back();
        for (const auto& poly : field) {
            if (spec.dimension() == 1 && poly.depends_on_second_axis()) {
                throw std::invalid_argument("noise polynomial uses xi_2 on a 1D grid");
            }
            row.emplace_back([poly](std::span<const double> xi) { return poly(xi); });
        }
    }
    return build(spec, fns);
}

VectorFieldSet VectorFieldSet::build(const GridSpec& spec,
                                     const std::vector<std::vector<ComponentFunction>>& components) {
    const int d = spec.dimension();
    VectorFieldSet out(spec);
    out.count_ = static_cast<int>(components.size());
    const std::size_t closed = spec.closed_size();
    const int m = spec.n() + 2;
    const int jmax = d == 1 ? 1 : m;

    for (int i = 0; i < out.count_; ++i) {
        const auto& field = components[static_cast<std::size_t>(i)];
        if (static_cast<int>(field.size()) != d) {
            throw std::invalid_argument("noise field " + std::to_string(i) + " has " +
                                        std::to_string(field.size()) + " components, expected " +
                                        std::to_string(d));
        }
        for (int k = 0; k < d; ++k) {
            std::vector<double> samples(closed, 0.0);
            for (int j = 0; j < jmax; ++j) {
                for (int a = 0; a < m; ++a) {
                    const std::array<double, 2> xi{a * spec.h(), j * spec.h()};
                    const double value =
                        field[static_cast<std::size_t>(k)](std::span<const double>(xi.data(), static_cast<std::size_t>(d)));
                    if (!std::isfinite(value)) {
                        throw std::invalid_argument("noise field " + std::to_string(i) +
                                                    " component " + std::to_string(k) +
                                                    " has a non-finite sample");
                    }
                    samples[spec.closed_index(a, j)] = value;
                }
            }
            out.b_.push_back(std::move(samples));
        }
    }

    // A_kj = sum_i b_ik b_ij
    for (std::size_t node = 0; node < closed; ++node) {
        for (int k = 0; k < d; ++k) {
            for (int j = 0; j < d; ++j) {
                double sum = 0.0;
                for (int i = 0; i < out.count_; ++i) sum += out.b(i, k, node) * out.b(i, j, node);
                out.a_(node, k, j) = sum;
            }
        }
    }

    out.da_.assign(4, std::vector<double>(closed, 0.0));
    for (int k = 0; k < d; ++k) {
        for (int j = 0; j < d; ++j) {
            std::vector<double> akj(closed);
            for (std::size_t node = 0; node < closed; ++node) akj[node] = out.a_(node, k, j);
            out.da_[static_cast<std::size_t>(2 * k + j)] = closed_derivative(spec, akj, k);
            out.sup_.a_sup[k][j] = sup_abs(akj);
            out.sup_.da_sup[k][j] = sup_abs(out.da_[static_cast<std::size_t>(2 * k + j)]);
        }
    }

    for (int i = 0; i < out.count_; ++i) {
        std::vector<double> div(closed, 0.0);
        for (int k = 0; k < d; ++k) {
            const auto dk = closed_derivative(spec, out.b_[static_cast<std::size_t>(i * d + k)], k);
            for (std::size_t node = 0; node < closed; ++node) div[node] += dk[node];
        }
        out.div_b_.push_back(std::move(div));
    }

    for (std::size_t node = 0; node < closed; ++node) {
        double b_sq = 0.0;
        double div_sq = 0.0;
        for (int i = 0; i < out.count_; ++i) {
            for (int k = 0; k < d; ++k) b_sq += out.b(i, k, node) * out.b(i, k, node);
            div_sq += out.div_b(i, node) * out.div_b(i, node);
        }
        out.sup_.b_sup = std::max(out.sup_.b_sup, std::sqrt(b_sq));
        out.sup_.div_b_sup = std::max(out.sup_.div_b_sup, std::sqrt(div_sq));
    }
    return out;
}

bool VectorFieldSet::is_zero() const {
    for (const auto& samples : b_) {
        for (double x : samples) {
            if (x != 0.0) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Constants

double gamma_of_b(const VectorFieldSet& fields) {
    const int d = fields.spec().dimension();
    const auto& sup = fields.sup_norms();
    double gamma = 0.0;
    for (int k = 0; k < d; ++k) {
        for (int j = 0; j < d; ++j) gamma = std::max(gamma, sup.a_sup[k][j] + sup.da_sup[k][j]);
    }
    return gamma;
}

CtildeEstimate estimate_Ctilde(const GridOperators& grid, const VectorFieldSet& fields,
                               int max_iterations, double relative_tolerance) {
    if (!(fields.spec() == grid.spec())) {
        throw std::invalid_argument("noise fields and operators live on different grids");
    }
    CtildeEstimate out;
    const double gamma = gamma_of_b(fields);
    if (gamma == 0.0) return out;

    const SparseMatrix div_form = grid.assemble_divergence_form(fields.a());
    CounterRng rng(StreamKey{0x0C71DE, StreamPurpose::testing});
    Eigen::VectorXd v(static_cast<Eigen::Index>(grid.spec().size()));
    for (Eigen::Index p = 0; p < v.size(); ++p) v[p] = rng.uniform() - 0.5;
    v.normalize();

    // Power iteration on T^T T with T = (-Lap)^{-1} D; both factors symmetric.
    double sigma_sq = 0.0;
    out.converged = false;
    for (int it = 1; it <= max_iterations; ++it) {
        const Eigen::VectorXd w = grid.poisson_solve(Eigen::VectorXd(div_form * v));
        const Eigen::VectorXd z = div_form * grid.poisson_solve(w);
        const double next = w.squaredNorm();
        out.iterations = it;
        const double z_norm = z.norm();
        if (z_norm == 0.0) {
            sigma_sq = next;
            out.converged = true;
            break;
        }
        v = z / z_norm;
        const bool settled = std::abs(next - sigma_sq) <= relative_tolerance * next;
        sigma_sq = next;
        if (settled) {
            out.converged = true;
            break;
        }
    }
    out.sigma_max = std::sqrt(sigma_sq);
    out.value = out.sigma_max / gamma;
    return out;
}

AdmissibilityReport check_admissibility(double nu, const VectorFieldSet& fields,
                                        const GridOperators& grid) {
    const bool noisy = fields.count() > 0 && !fields.is_zero();
    if (!std::isfinite(nu) || nu < 0.0) {
        throw std::invalid_argument("viscosity nu must be finite and non-negative");
    }
    if (nu == 0.0 && noisy) {
        throw AdmissibilityError(
            "nu = 0 forces b = 0: the noise-viscosity condition cannot hold with nonzero noise");
    }
    const double gamma = gamma_of_b(fields);
    const CtildeEstimate ctilde = estimate_Ctilde(grid, fields);
    const double b_sup_sq = fields.sup_norms().b_sup * fields.sup_norms().b_sup;
    const double lhs = ctilde.value * gamma + b_sup_sq;
    const double div_sup = fields.sup_norms().div_b_sup;
    return AdmissibilityReport{
        .gamma = gamma,
        .ctilde_estimate = ctilde.value,
        .ctilde_converged = ctilde.converged,
        .b_sup_sq = b_sup_sq,
        .nu = nu,
        .lhs = lhs,
        .passes = lhs <= 2.0 * nu,
        .c1 = nu - 0.5 * lhs,
        .c2 = div_sup * div_sup,
    };
}

// ---------------------------------------------------------------------------
// Field operations

GridField stratonovich_correction(const GridOperators& grid, const VectorFieldSet& fields,
                                  const GridField& u) {
    GridField out = grid.divergence_form_apply(fields.a(), u);
    out.vec() *= 0.5;
    return out;
}

GridField transport_term(const GridOperators& grid, const VectorFieldSet& fields, int i,
                         const GridField& u) {
    const auto& spec = grid.spec();
    const auto grad = grid.gradient(u);
    GridField out(spec);
    for (std::size_t p = 0; p < spec.size(); ++p) {
        const std::size_t node = closed_node_of(spec, p);
        double value = 0.0;
        for (int k = 0; k < spec.dimension(); ++k) value += fields.b(i, k, node) * grad[static_cast<std::size_t>(k)][p];
        out[p] = value;
    }
    return out;
}

GridField conservative_transport_term(const GridOperators& grid, const VectorFieldSet& fields,
                                      int i, const GridField& u) {
    const auto& spec = grid.spec();
    const int n = spec.n();
    const double inv_2h = 0.5 / spec.h();
    GridField out(spec);
    for (std::size_t p = 0; p < spec.size(); ++p) {
        const auto pos = spec.position(p);
        const std::size_t node = spec.closed_index(pos[0], pos[1]);
        double div = 0.0;
        for (int k = 0; k < spec.dimension(); ++k) {
            const int axis_pos = pos[static_cast<std::size_t>(k)];
            const std::size_t stride = k == 0 ? 1 : static_cast<std::size_t>(n);
            const std::size_t closed_stride = k == 0 ? 1 : static_cast<std::size_t>(n + 2);
            const double up = axis_pos < n ? fields.b(i, k, node + closed_stride) * u[p + stride] : 0.0;
            const double down = axis_pos > 1 ? fields.b(i, k, node - closed_stride) * u[p - stride] : 0.0;
            div += (up - down) * inv_2h;
        }
        out[p] = div - fields.div_b(i, node) * u[p];
    }
    return out;
}

GridField noise_increment(const GridOperators& grid, const VectorFieldSet& fields,
                          const GridField& u, std::span<const double> dw) {
    if (static_cast<int>(dw.size()) != fields.count()) {
        throw std::invalid_argument("noise increment needs " + std::to_string(fields.count()) +
                                    " Brownian increments, got " + std::to_string(dw.size()));
    }
    const auto& spec = grid.spec();
    GridField out(spec);
    if (fields.count() == 0) return out;
    const auto grad = grid.gradient(u);
    for (std::size_t p = 0; p < spec.size(); ++p) {
        const std::size_t node = closed_node_of(spec, p);
        double value = 0.0;
        for (int i = 0; i < fields.count(); ++i) {
            double dot = 0.0;
            for (int k = 0; k < spec.dimension(); ++k) dot += fields.b(i, k, node) * grad[static_cast<std::size_t>(k)][p];
            value += dot * dw[static_cast<std::size_t>(i)];
        }
        out[p] = value;
    }
    return out;
}

}  // namespace spme
