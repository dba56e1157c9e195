#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace spme {

using SparseMatrix = Eigen::SparseMatrix<double>;

/**
 * Uniform finite-difference grid on the unit interval/square with
 * homogeneous Dirichlet boundary.
 *
 * Interior nodes sit at xi = i*h for i = 1..n on every axis, h = 1/(n+1).
 * Boundary values are identically zero and never stored. Fields are ordered
 * lexicographically with axis 0 running fastest.
 */
class GridSpec {
public:
    static GridSpec make(int dimension, int cells_per_axis);

    int dimension() const { return dimension_; }
    int n() const { return n_; }
    double h() const { return 1.0 / static_cast<double>(n_ + 1); }
    /// Quadrature weight h^d carried by every discrete norm.
    double cell_volume() const;
    std::size_t size() const;
    /// Node count of the closed grid (boundary included), (n+2)^d.
    std::size_t closed_size() const;

    std::size_t index(int i) const { return static_cast<std::size_t>(i - 1); }
    std::size_t index(int i, int j) const {
        return static_cast<std::size_t>(j - 1) * static_cast<std::size_t>(n_) +
               static_cast<std::size_t>(i - 1);
    }
    /// Closed-grid index; i, j in [0, n+1].
    std::size_t closed_index(int i, int j = 0) const {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(n_ + 2) +
               static_cast<std::size_t>(i);
    }

    /// Axis positions (1-based, per axis) of an interior node.
    std::array<int, 2> position(std::size_t index) const;
    std::array<double, 2> coordinate(std::size_t index) const;

    friend bool operator==(const GridSpec&, const GridSpec&) = default;

private:
    GridSpec(int dimension, int n) : dimension_(dimension), n_(n) {}

    int dimension_;
    int n_;
};

/// Nodal values of a function on the interior grid.
class GridField {
public:
    explicit GridField(const GridSpec& spec);
    GridField(const GridSpec& spec, Eigen::VectorXd values);

    /// Samples f at every interior node.
    static GridField sample(const GridSpec& spec,
                            const std::function<double(std::span<const double>)>& f);

    const GridSpec& spec() const { return spec_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

    double& operator[](std::size_t i) { return values_[static_cast<Eigen::Index>(i)]; }
    double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

    Eigen::VectorXd& vec() { return values_; }
    const Eigen::VectorXd& vec() const { return values_; }
    std::span<const double> values() const { return {values_.data(), size()}; }

    bool all_finite() const { return values_.allFinite(); }
    bool is_zero() const { return (values_.array() == 0.0).all(); }

private:
    GridSpec spec_;
    Eigen::VectorXd values_;
};

/**
 * Symmetric d x d tensor per node of the closed grid (boundary included),
 * as needed by the conservative flux discretization of div(A grad u).
 */
class TensorField {
public:
    explicit TensorField(const GridSpec& spec);

    static TensorField constant(const GridSpec& spec, const Eigen::Matrix2d& value);
    static TensorField identity(const GridSpec& spec);
    /// Samples a tensor-valued function; entries beyond the grid dimension are ignored.
    static TensorField sample(const GridSpec& spec,
                              const std::function<Eigen::Matrix2d(std::span<const double>)>& f);

    const GridSpec& spec() const { return spec_; }
    double operator()(std::size_t closed_node, int k, int j) const {
        return data_[closed_node * 4 + static_cast<std::size_t>(2 * k + j)];
    }
    double& operator()(std::size_t closed_node, int k, int j) {
        return data_[closed_node * 4 + static_cast<std::size_t>(2 * k + j)];
    }

    /// Max |A_kj - A_jk| over all nodes.
    double asymmetry() const;

private:
    GridSpec spec_;
    std::vector<double> data_;
};

struct EigenPair {
    double value;
    GridField mode;
};

/**
 * Discrete Dirichlet Laplacian, its Poisson inverse and the weighted norms.
 *
 * Immutable after construction; the sparse Cholesky factorization of -Laplacian
 * is computed once and shared by every solve.
 */
class GridOperators {
public:
    explicit GridOperators(const GridSpec& spec);

    const GridSpec& spec() const { return spec_; }
    const SparseMatrix& laplacian() const { return laplacian_; }

    GridField laplacian_apply(const GridField& u) const;
    /// Solves -Laplacian z = f.
    GridField poisson_solve(const GridField& f) const;
    Eigen::VectorXd poisson_solve(const Eigen::VectorXd& f) const;

    double inner_l2(const GridField& u, const GridField& v) const;
    double inner_h_minus1(const GridField& u, const GridField& v) const;
    double h_minus1_norm(const GridField& u) const;
    double h_minus1_norm(const Eigen::VectorXd& u) const;
    double lp_norm(const GridField& u, double p) const;
    double l2_norm(const GridField& u) const { return lp_norm(u, 2.0); }
    /// |grad u|_2 with forward differences across every face, boundary faces included.
    double h1_seminorm(const GridField& u) const;

    /// Centered differences per axis, zero Dirichlet ghosts.
    std::vector<GridField> gradient(const GridField& u) const;
    /// Forward differences (u_{i+1} - u_i)/h per axis at interior nodes.
    std::vector<GridField> forward_gradient(const GridField& u) const;

    /// Conservative flux-form assembly of div(A grad .): face-averaged diagonal
    /// coefficients plus a cell-centred symmetric treatment of cross terms.
    SparseMatrix assemble_divergence_form(const TensorField& a) const;
    GridField divergence_form_apply(const TensorField& a, const GridField& u) const;

    /// Eigenvalue of -Laplacian for mode (k, l); l ignored in 1D.
    double eigenvalue(int k, int l = 1) const;
    double smallest_eigenvalue() const { return eigenvalue(1, 1); }
    /// Eigenpairs of -Laplacian in ascending order; at most max_modes entries.
    std::vector<EigenPair> eigen_cache(std::size_t max_modes) const;
    GridField eigenmode(int k, int l = 1) const;

private:
    void check(const GridField& u) const;

    GridSpec spec_;
    SparseMatrix laplacian_;
    Eigen::SimplicialLLT<SparseMatrix> neg_laplacian_factor_;
};

}  // namespace spme
