#include "spme/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace spme {

namespace {

using Triplet = Eigen::Triplet<double>;

// (n+1)^2 is an integer, so every stencil coefficient below is exact.
double inverse_h_squared(const GridSpec& spec) {
    const double np1 = static_cast<double>(spec.n() + 1);
    return np1 * np1;
}

}  // namespace

// ---------------------------------------------------------------------------
// GridSpec

GridSpec GridSpec::make(int dimension, int cells_per_axis) {
    if (dimension != 1 && dimension != 2) {
        throw std::invalid_argument("grid dimension must be 1 or 2, got " +
                                    std::to_string(dimension));
    }
    if (cells_per_axis < 4) {
        throw std::invalid_argument("grid needs at least 4 cells per axis, got " +
                                    std::to_string(cells_per_axis));
    }
    return GridSpec(dimension, cells_per_axis);
}

double GridSpec::cell_volume() const {
    return dimension_ == 1 ? h() : h() * h();
}

std::size_t GridSpec::size() const {
    const auto n = static_cast<std::size_t>(n_);
    return dimension_ == 1 ? n : n * n;
}

std::size_t GridSpec::closed_size() const {
    const auto m = static_cast<std::size_t>(n_ + 2);
    return dimension_ == 1 ? m : m * m;
}

std::array<int, 2> GridSpec::position(std::size_t index) const {
    const auto n = static_cast<std::size_t>(n_);
    if (dimension_ == 1) {
        return {static_cast<int>(index) + 1, 0};
    }
    return {static_cast<int>(index % n) + 1, static_cast<int>(index / n) + 1};
}

std::array<double, 2> GridSpec::coordinate(std::size_t index) const {
    const auto pos = position(index);
    return {pos[0] * h(), pos[1] * h()};
}

// ---------------------------------------------------------------------------
// GridField / TensorField

GridField::GridField(const GridSpec& spec)
    : spec_(spec), values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.size()))) {}

GridField::GridField(const GridSpec& spec, Eigen::VectorXd values)
    : spec_(spec), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.size()) != spec_.size()) {
        throw std::invalid_argument("field length " + std::to_string(values_.size()) +
                                    " does not match grid size " +
                                    std::to_string(spec_.size()));
    }
}

GridField GridField::sample(const GridSpec& spec,
                            const std::function<double(std::span<const double>)>& f) {
    GridField out(spec);
    for (std::size_t p = 0; p < spec.size(); ++p) {
        const auto xi = spec.coordinate(p);
        out[p] = f(std::span<const double>(xi.data(), static_cast<std::size_t>(spec.dimension())));
    }
    return out;
}

TensorField::TensorField(const GridSpec& spec)
    : spec_(spec), data_(spec.closed_size() * 4, 0.0) {}

TensorField TensorField::constant(const GridSpec& spec, const Eigen::Matrix2d& value) {
    return sample(spec, [&](std::span<const double>) { return value; });
}

TensorField TensorField::identity(const GridSpec& spec) {
    return constant(spec, Eigen::Matrix2d::Identity());
}

TensorField TensorField::sample(
    const GridSpec& spec, const std::function<Eigen::Matrix2d(std::span<const double>)>& f) {
    TensorField out(spec);
    const int m = spec.n() + 2;
    const int d = spec.dimension();
    const int jmax = d == 1 ? 1 : m;
    for (int j = 0; j < jmax; ++j) {
        for (int i = 0; i < m; ++i) {
            const std::array<double, 2> xi{i * spec.h(), j * spec.h()};
            const Eigen::Matrix2d value = f(std::span<const double>(xi.data(), static_cast<std::size_t>(d)));
            const std::size_t node = spec.closed_index(i, j);
            for (int k = 0; k < d; ++k) {
                for (int l = 0; l < d; ++l) {
                    out(node, k, l) = value(k, l);
                }
            }
        }
    }
    return out;
}

double TensorField::asymmetry() const {
    if (spec_.dimension() == 1) {
        return 0.0;
    }
    double worst = 0.0;
    for (std::size_t node = 0; node < spec_.closed_size(); ++node) {
        worst = std::max(worst, std::abs((*this)(node, 0, 1) - (*this)(node, 1, 0)));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// GridOperators

GridOperators::GridOperators(const GridSpec& spec) : spec_(spec) {
    const double inv_h2 = inverse_h_squared(spec_);
    const int n = spec_.n();
    const auto size = static_cast<Eigen::Index>(spec_.size());
    std::vector<Triplet> triplets;
    triplets.reserve(spec_.size() * static_cast<std::size_t>(1 + 2 * spec_.dimension()));

    for (std::size_t p = 0; p < spec_.size(); ++p) {
        const auto pos = spec_.position(p);
        const auto row = static_cast<Eigen::Index>(p);
        triplets.emplace_back(row, row, -2.0 * spec_.dimension() * inv_h2);
        if (pos[0] > 1) triplets.emplace_back(row, static_cast<Eigen::Index>(p - 1), inv_h2);
        if (pos[0] < n) triplets.emplace_back(row, static_cast<Eigen::Index>(p + 1), inv_h2);
        if (spec_.dimension() == 2) {
            const auto stride = static_cast<std::size_t>(n);
            if (pos[1] > 1) triplets.emplace_back(row, static_cast<Eigen::Index>(p - stride), inv_h2);
            if (pos[1] < n) triplets.emplace_back(row, static_cast<Eigen::Index>(p + stride), inv_h2);
        }
    }
    laplacian_.resize(size, size);
    laplacian_.setFromTriplets(triplets.begin(), triplets.end());
    laplacian_.makeCompressed();

    const SparseMatrix negative = -laplacian_;
    neg_laplacian_factor_.compute(negative);
    if (neg_laplacian_factor_.info() != Eigen::Success) {
        throw std::runtime_error("Cholesky factorization of -Laplacian failed (matrix not SPD)");
    }
}

void GridOperators::check(const GridField& u) const {
    if (!(u.spec() == spec_)) {
        throw std::invalid_argument("field grid (d=" + std::to_string(u.spec().dimension()) +
                                    ", n=" + std::to_string(u.spec().n()) +
                                    ") does not match operator grid (d=" +
                                    std::to_string(spec_.dimension()) +
                                    ", n=" + std::to_string(spec_.n()) + ")");
    }
}

GridField GridOperators::laplacian_apply(const GridField& u) const {
    check(u);
    return GridField(spec_, laplacian_ * u.vec());
}

Eigen::VectorXd GridOperators::poisson_solve(const Eigen::VectorXd& f) const {
    Eigen::VectorXd z = neg_laplacian_factor_.solve(f);
    if (neg_laplacian_factor_.info() != Eigen::Success) {
        throw std::runtime_error("Poisson solve failed");
    }
    return z;
}

GridField GridOperators::poisson_solve(const GridField& f) const {
    check(f);
    return GridField(spec_, poisson_solve(f.vec()));
}

double GridOperators::inner_l2(const GridField& u, const GridField& v) const {
    check(u);
    check(v);
    return spec_.cell_volume() * u.vec().dot(v.vec());
}

double GridOperators::inner_h_minus1(const GridField& u, const GridField& v) const {
    check(u);
    check(v);
    return spec_.cell_volume() * u.vec().dot(poisson_solve(v.vec()));
}

double GridOperators::h_minus1_norm(const Eigen::VectorXd& u) const {
    const double value = spec_.cell_volume() * u.dot(poisson_solve(u));
    return std::sqrt(std::max(value, 0.0));
}

double GridOperators::h_minus1_norm(const GridField& u) const {
    check(u);
    return h_minus1_norm(u.vec());
}

double GridOperators::lp_norm(const GridField& u, double p) const {
    check(u);
    if (!(p >= 1.0) || !std::isfinite(p)) {
        throw std::invalid_argument("lp_norm requires finite p >= 1, got " + std::to_string(p));
    }
    if (p == 2.0) {
        return std::sqrt(spec_.cell_volume() * u.vec().squaredNorm());
    }
    if (p == 1.0) {
        return spec_.cell_volume() * u.vec().lpNorm<1>();
    }
    double sum = 0.0;
    for (double x : u.values()) {
        sum += std::pow(std::abs(x), p);
    }
    return std::pow(spec_.cell_volume() * sum, 1.0 / p);
}

double GridOperators::h1_seminorm(const GridField& u) const {
    check(u);
    // Forward differences over all faces equal <-Laplacian u, u> exactly.
    return std::sqrt(std::max(0.0, -spec_.cell_volume() * u.vec().dot(laplacian_ * u.vec())));
}

std::vector<GridField> GridOperators::gradient(const GridField& u) const {
    check(u);
    const int n = spec_.n();
    const double inv_2h = 0.5 * static_cast<double>(n + 1);
    const auto stride = static_cast<std::size_t>(n);
    std::vector<GridField> out(static_cast<std::size_t>(spec_.dimension()), GridField(spec_));
    for (std::size_t p = 0; p < spec_.size(); ++p) {
        const auto pos = spec_.position(p);
        const double left = pos[0] > 1 ? u[p - 1] : 0.0;
        const double right = pos[0] < n ? u[p + 1] : 0.0;
        out[0][p] = (right - left) * inv_2h;
        if (spec_.dimension() == 2) {
            const double down = pos[1] > 1 ? u[p - stride] : 0.0;
            const double up = pos[1] < n ? u[p + stride] : 0.0;
            out[1][p] = (up - down) * inv_2h;
        }
    }
    return out;
}

std::vector<GridField> GridOperators::forward_gradient(const GridField& u) const {
    check(u);
    const int n = spec_.n();
    const double inv_h = static_cast<double>(n + 1);
    const auto stride = static_cast<std::size_t>(n);
    std::vector<GridField> out(static_cast<std::size_t>(spec_.dimension()), GridField(spec_));
    for (std::size_t p = 0; p < spec_.size(); ++p) {
        const auto pos = spec_.position(p);
        const double right = pos[0] < n ? u[p + 1] : 0.0;
        out[0][p] = (right - u[p]) * inv_h;
        if (spec_.dimension() == 2) {
            const double up = pos[1] < n ? u[p + stride] : 0.0;
            out[1][p] = (up - u[p]) * inv_h;
        }
    }
    return out;
}

SparseMatrix GridOperators::assemble_divergence_form(const TensorField& a) const {
    if (!(a.spec() == spec_)) {
        throw std::invalid_argument("tensor field grid does not match operator grid");
    }
    if (a.asymmetry() > 1e-12) {
        throw std::invalid_argument("divergence form requires a symmetric tensor field (asymmetry " +
                                    std::to_string(a.asymmetry()) + ")");
    }
    const double inv_h2 = inverse_h_squared(spec_);
    const int n = spec_.n();
    const int d = spec_.dimension();
    const auto size = static_cast<Eigen::Index>(spec_.size());
    std::vector<Triplet> triplets;
    triplets.reserve(spec_.size() * 9);

    // Diagonal coefficients A_kk on faces, averaged from the two adjacent nodes.
    for (std::size_t p = 0; p < spec_.size(); ++p) {
        const auto pos = spec_.position(p);
        const auto row = static_cast<Eigen::Index>(p);
        const std::size_t self = spec_.closed_index(pos[0], pos[1]);
        double diagonal = 0.0;
        for (int k = 0; k < d; ++k) {
            const int axis_pos = pos[static_cast<std::size_t>(k)];
            const std::size_t stride = k == 0 ? 1 : static_cast<std::size_t>(n);
            const std::size_t closed_stride = k == 0 ? 1 : static_cast<std::size_t>(n + 2);
            const double a_minus = 0.5 * (a(self, k, k) + a(self - closed_stride, k, k));
            const double a_plus = 0.5 * (a(self, k, k) + a(self + closed_stride, k, k));
            diagonal += a_minus + a_plus;
            if (axis_pos > 1) triplets.emplace_back(row, static_cast<Eigen::Index>(p - stride), a_minus * inv_h2);
            if (axis_pos < n) triplets.emplace_back(row, static_cast<Eigen::Index>(p + stride), a_plus * inv_h2);
        }
        triplets.emplace_back(row, row, -diagonal * inv_h2);
    }

    // Cross terms: gradient at each dual-cell centre from its four corners,
    // giving the symmetric bilinear form h^2 sum_c A_01 (dx u dy v + dy u dx v).
    if (d == 2) {
        constexpr std::array<int, 4> di{0, 1, 0, 1};
        constexpr std::array<int, 4> dj{0, 0, 1, 1};
        constexpr std::array<double, 4> gx{-1.0, 1.0, -1.0, 1.0};
        constexpr std::array<double, 4> gy{-1.0, -1.0, 1.0, 1.0};
        for (int j = 0; j <= n; ++j) {
            for (int i = 0; i <= n; ++i) {
                double a01 = 0.0;
                for (int c = 0; c < 4; ++c) {
                    const std::size_t node = spec_.closed_index(i + di[c], j + dj[c]);
                    a01 += 0.5 * (a(node, 0, 1) + a(node, 1, 0));
                }
                a01 *= 0.25;
                if (a01 == 0.0) {
                    continue;
                }
                const double scale = -0.25 * a01 * inv_h2;
                for (int r = 0; r < 4; ++r) {
                    const int ri = i + di[r];
                    const int rj = j + dj[r];
                    if (ri < 1 || ri > n || rj < 1 || rj > n) continue;
                    for (int c = 0; c < 4; ++c) {
                        const int ci = i + di[c];
                        const int cj = j + dj[c];
                        if (ci < 1 || ci > n || cj < 1 || cj > n) continue;
                        const double value = scale * (gx[r] * gy[c] + gy[r] * gx[c]);
                        triplets.emplace_back(static_cast<Eigen::Index>(spec_.index(ri, rj)),
                                              static_cast<Eigen::Index>(spec_.index(ci, cj)), value);
                    }
                }
            }
        }
    }

    SparseMatrix out(size, size);
    out.setFromTriplets(triplets.begin(), triplets.end());
    out.makeCompressed();
    return out;
}

GridField GridOperators::divergence_form_apply(const TensorField& a, const GridField& u) const {
    check(u);
    return GridField(spec_, assemble_divergence_form(a) * u.vec());
}

double GridOperators::eigenvalue(int k, int l) const {
    const double h = spec_.h();
    const auto axis = [&](int mode) {
        const double s = std::sin(0.5 * mode * std::numbers::pi * h);
        return 4.0 * s * s / (h * h);
    };
    return spec_.dimension() == 1 ? axis(k) : axis(k) + axis(l);
}

GridField GridOperators::eigenmode(int k, int l) const {
    const int d = spec_.dimension();
    return GridField::sample(spec_, [&](std::span<const double> xi) {
        double value = std::sin(k * std::numbers::pi * xi[0]);
        if (d == 2) value *= std::sin(l * std::numbers::pi * xi[1]);
        return value;
    });
}

std::vector<EigenPair> GridOperators::eigen_cache(std::size_t max_modes) const {
    const int n = spec_.n();
    std::vector<std::array<int, 2>> modes;
    if (spec_.dimension() == 1) {
        for (int k = 1; k <= n; ++k) modes.push_back({k, 1});
    } else {
        for (int l = 1; l <= n; ++l)
            for (int k = 1; k <= n; ++k) modes.push_back({k, l});
    }
    std::stable_sort(modes.begin(), modes.end(), [&](const auto& x, const auto& y) {
        return eigenvalue(x[0], x[1]) < eigenvalue(y[0], y[1]);
    });
    modes.resize(std::min(max_modes, modes.size()));
    std::vector<EigenPair> out;
    out.reserve(modes.size());
    for (const auto& mode : modes) {
        out.push_back({eigenvalue(mode[0], mode[1]), eigenmode(mode[0], mode[1])});
    }
    return out;
}

}  // namespace spme
