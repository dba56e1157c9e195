#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/SparseLU>

#include "spme/grid.hpp"
#include "spme/monotone.hpp"
#include "spme/noise.hpp"

namespace spme {

struct SolverConfig {
    double dt = 1e-3;
    double t_end = 1.0;
    double lambda = 1e-2;
    double newton_tol = 1e-10;  // relative to |rhs|_{-1}
    int newton_max_iters = 50;
    int record_every = 1;
    double extinction_eps = 0.0;
    bool freeze_jacobian = false;
    bool keep_snapshots = false;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
    int step_count() const;
};

/// Everything a path needs besides the configuration. References must outlive the problem.
struct SpdeProblem {
    const GridOperators& grid;
    const VectorFieldSet& fields;
    MonotoneGraph graph;
    double nu;
};

class StepFailure : public std::runtime_error {
public:
    StepFailure(const std::string& what, std::vector<double> trace)
        : std::runtime_error(what), residual_trace(std::move(trace)) {}
    std::vector<double> residual_trace;
};

struct StepResult {
    GridField state;
    int newton_iterations = 0;
    double residual = 0.0;  // |F|_{-1} at acceptance
    double target = 0.0;    // newton_tol * |rhs|_{-1}
    bool roundoff_limited = false;
};

/**
 * Backward-Euler drift, explicit noise:
 *   Y - dt [nu Lap Y + Lap psi_lambda(Y) + 1/2 div(A grad Y)] = X + sum_i (b_i . grad X) dW_i
 * solved by damped Newton. Tridiagonal elimination in 1D, sparse LU in 2D.
 */
class ImplicitStepper {
public:
    ImplicitStepper(const SpdeProblem& problem, const SolverConfig& config);

    StepResult step(const GridField& state, std::span<const double> dw) const {
        return step(state, dw, config_.dt);
    }
    StepResult step(const GridField& state, std::span<const double> dw, double dt) const;

    /// Right-hand side X + noise increment.
    Eigen::VectorXd rhs(const GridField& state, std::span<const double> dw) const;
    /// F(Y) for the implicit equation with the given right-hand side.
    Eigen::VectorXd residual(const Eigen::VectorXd& next, const Eigen::VectorXd& rhs, double dt) const;

    const SpdeProblem& problem() const { return problem_; }
    const SolverConfig& config() const { return config_; }

private:
    struct Workspace;

    void evaluate_psi(const Eigen::VectorXd& y, Eigen::VectorXd& value, Eigen::VectorXd* slope) const;
    void solve_linear(const Eigen::VectorXd& slope, double dt, Eigen::VectorXd& rhs_in_out,
                      Workspace& ws, bool refactor) const;

    SpdeProblem problem_;
    SolverConfig config_;
    YosidaParams yosida_;
    SparseMatrix drift_;  // nu Lap + 1/2 div(A grad .)
    // 1D bands of the drift and the Laplacian (index i couples i-1, i, i+1).
    std::vector<double> drift_lower_, drift_diag_, drift_upper_;
    std::vector<double> lap_off_, lap_diag_;
};

struct NormSample {
    double l2;
    double hminus1;
    double l1pm;  // |X|_{1+m}
    double h1semi;
};

struct SimulationPath {
    std::vector<double> times;
    std::vector<GridField> snapshots;
    std::vector<double> l2;
    std::vector<double> hminus1;
    std::vector<double> l1pm;
    std::vector<double> h1semi;
    std::vector<double> cumulative_h1;  // int_0^t |grad X|_2^2 ds
    std::optional<double> extinction_time;
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;
    int halved_steps = 0;
    int total_newton_iterations = 0;
};

/// Exponent 1 + m for the recorded |X|_{1+m} series.
double l1pm_exponent(const MonotoneGraph& graph);
NormSample measure(const GridOperators& grid, const MonotoneGraph& graph, const GridField& u);

/// One trajectory driven by the Brownian stream (seed, path_index).
SimulationPath simulate_path(const GridField& x0, const ImplicitStepper& stepper,
                             std::uint64_t seed, std::uint64_t path_index);

struct SeriesStats {
    std::vector<double> mean;
    std::vector<double> variance;  // unbiased; 0 for a single path
    std::vector<double> std_error;
};

struct PathFailure {
    std::uint64_t path_index;
    std::string message;
};

class MonteCarloError : public std::runtime_error {
public:
    MonteCarloError(const std::string& what, std::vector<PathFailure> failures)
        : std::runtime_error(what), failures(std::move(failures)) {}
    std::vector<PathFailure> failures;
};

struct Ensemble {
    std::vector<SimulationPath> paths;  // successful paths, ascending path_index
    std::vector<PathFailure> failures;
    std::vector<double> times;
    SeriesStats l2;
    SeriesStats hminus1;
    SeriesStats l1pm;
    SeriesStats h1semi;
    SeriesStats cumulative_h1;
};

/// Mean, variance and standard error of f(path, time_index) across paths,
/// accumulated in path order with compensated sums.
template <class F>
SeriesStats ensemble_statistic(const Ensemble& ensemble, F&& f);

/// Worker count: explicit value if > 0, else SPME_THREADS, else 1.
int resolve_threads(int requested);

Ensemble monte_carlo(const GridField& x0, const ImplicitStepper& stepper, int n_paths,
                     std::uint64_t seed, int threads = 0);

struct CauchyReport {
    std::vector<double> lambdas;
    std::vector<double> distance;         // D_k = E sup_t |X_k - X_{k+1}|_{-1}^2
    std::vector<double> distance_stderr;
    std::vector<double> ratio;            // D_k / (lambda_k + lambda_{k+1})
    double max_ratio = 0.0;
    bool strictly_decreasing = false;
    std::vector<PathFailure> failures;
    int n_paths = 0;
};

/// Coupled runs: every lambda reuses the Brownian increments of each path.
CauchyReport yosida_continuation(const GridField& x0, const SpdeProblem& problem,
                                 const SolverConfig& base, std::span<const double> lambdas,
                                 int n_paths, std::uint64_t seed, int threads = 0);

// ---------------------------------------------------------------------------

namespace detail {

/// Neumaier compensated summation.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace detail

template <class F>
SeriesStats ensemble_statistic(const Ensemble& ensemble, F&& f) {
    const std::size_t n_times = ensemble.times.size();
    const std::size_t n = ensemble.paths.size();
    SeriesStats out;
    out.mean.assign(n_times, 0.0);
    out.variance.assign(n_times, 0.0);
    out.std_error.assign(n_times, 0.0);
    if (n == 0) return out;
    for (std::size_t t = 0; t < n_times; ++t) {
        detail::CompensatedSum sum;
        for (const auto& path : ensemble.paths) sum.add(f(path, t));
        const double mean = sum.value() / static_cast<double>(n);
        detail::CompensatedSum sq;
        for (const auto& path : ensemble.paths) {
            const double dev = f(path, t) - mean;
            sq.add(dev * dev);
        }
        out.mean[t] = mean;
        if (n > 1) {
            out.variance[t] = sq.value() / static_cast<double>(n - 1);
            out.std_error[t] = std::sqrt(out.variance[t] / static_cast<double>(n));
        }
    }
    return out;
}

}  // namespace spme
