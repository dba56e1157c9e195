#include "spme/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cfloat>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "spme/rng.hpp"

namespace spme {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 30;

std::string describe(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", x);
    return buf;
}

// Solves the tridiagonal system in place. Diagonal dominance by columns keeps
// elimination without pivoting stable.
void thomas(std::vector<double> lower, std::vector<double> diag, std::vector<double> upper,
            Eigen::VectorXd& x) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        x[static_cast<Eigen::Index>(i)] -= w * x[static_cast<Eigen::Index>(i - 1)];
    }
    x[static_cast<Eigen::Index>(n - 1)] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) {
        const auto k = static_cast<Eigen::Index>(i);
        x[k] = (x[k] - upper[i] * x[k + 1]) / diag[i];
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// SolverConfig

void SolverConfig::validate() const {
    const auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(what);
    };
    need(dt > 0.0 && std::isfinite(dt), "solver.dt must be positive and finite");
    need(t_end > 0.0 && std::isfinite(t_end), "solver.t_end must be positive and finite");
    need(dt <= t_end, "solver.dt must not exceed solver.t_end");
    need(lambda > 0.0 && std::isfinite(lambda), "solver.lambda must be positive and finite");
    need(newton_tol > 0.0 && std::isfinite(newton_tol), "solver.newton_tol must be positive");
    need(newton_max_iters >= 1, "solver.newton_max_iters must be at least 1");
    need(record_every >= 1, "solver.record_every must be at least 1");
    need(extinction_eps >= 0.0 && std::isfinite(extinction_eps),
         "solver.extinction_eps must be non-negative");
}

int SolverConfig::step_count() const {
    // Guard against t_end/dt landing a hair above an integer.
    const double ratio = t_end / dt;
    const double nearest = std::round(ratio);
    if (std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, nearest)) return static_cast<int>(nearest);
    return static_cast<int>(std::ceil(ratio));
}

// ---------------------------------------------------------------------------
// ImplicitStepper

struct ImplicitStepper::Workspace {
    Eigen::SparseLU<SparseMatrix> lu;
    bool analyzed = false;
    Eigen::VectorXd slope;
};

ImplicitStepper::ImplicitStepper(const SpdeProblem& problem, const SolverConfig& config)
    : problem_(problem), config_(config), yosida_{config.lambda} {
    config_.validate();
    const auto& grid = problem_.grid;
    if (!(problem_.fields.spec() == grid.spec())) {
        throw std::invalid_argument("noise fields and operators live on different grids");
    }
    if (!(problem_.nu >= 0.0) || !std::isfinite(problem_.nu)) {
        throw std::invalid_argument("nu must be finite and non-negative");
    }
    drift_ = problem_.nu * grid.laplacian();
    if (problem_.fields.count() > 0) {
        drift_ += 0.5 * grid.assemble_divergence_form(problem_.fields.a());
    }
    drift_.makeCompressed();

    if (grid.spec().dimension() == 1) {
        const auto n = static_cast<std::size_t>(grid.spec().n());
        drift_lower_.assign(n, 0.0);
        drift_diag_.assign(n, 0.0);
        drift_upper_.assign(n, 0.0);
        lap_diag_.assign(n, 0.0);
        lap_off_.assign(n, 0.0);
        for (int col = 0; col < drift_.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator it(drift_, col); it; ++it) {
                const auto r = static_cast<std::size_t>(it.row());
                const auto c = static_cast<std::size_t>(it.col());
                if (r == c) drift_diag_[r] = it.value();
                else if (c + 1 == r) drift_lower_[r] = it.value();
                else if (r + 1 == c) drift_upper_[r] = it.value();
            }
        }
        const SparseMatrix& lap = grid.laplacian();
        for (int col = 0; col < lap.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator it(lap, col); it; ++it) {
                const auto r = static_cast<std::size_t>(it.row());
                if (it.row() == it.col()) lap_diag_[r] = it.value();
                else lap_off_[r] = it.value();
            }
        }
    }
}

void ImplicitStepper::evaluate_psi(const Eigen::VectorXd& y, Eigen::VectorXd& value,
                                   Eigen::VectorXd* slope) const {
    value.resize(y.size());
    if (slope) slope->resize(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const auto v = yosida_with_derivative(problem_.graph, yosida_, y[i]);
        value[i] = v.value;
        if (slope) (*slope)[i] = v.derivative;
    }
}

Eigen::VectorXd ImplicitStepper::rhs(const GridField& state, std::span<const double> dw) const {
    if (problem_.fields.count() == 0) {
        if (!dw.empty()) throw std::invalid_argument("noise-free problem takes no Brownian increments");
        return state.vec();
    }
    return state.vec() + noise_increment(problem_.grid, problem_.fields, state, dw).vec();
}

Eigen::VectorXd ImplicitStepper::residual(const Eigen::VectorXd& next, const Eigen::VectorXd& rhs,
                                          double dt) const {
    Eigen::VectorXd psi;
    evaluate_psi(next, psi, nullptr);
    return next - dt * (drift_ * next + problem_.grid.laplacian() * psi) - rhs;
}

void ImplicitStepper::solve_linear(const Eigen::VectorXd& slope, double dt,
                                   Eigen::VectorXd& rhs_in_out, Workspace& ws,
                                   bool refactor) const {
    if (refactor) ws.slope = slope;
    const auto& s = ws.slope;
    if (problem_.grid.spec().dimension() == 1) {
        const auto n = drift_diag_.size();
        std::vector<double> lower(n), diag(n), upper(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            diag[i] = 1.0 - dt * (drift_diag_[i] + lap_diag_[i] * s[k]);
            lower[i] = i > 0 ? -dt * (drift_lower_[i] + lap_off_[i] * s[k - 1]) : 0.0;
            upper[i] = i + 1 < n ? -dt * (drift_upper_[i] + lap_off_[i] * s[k + 1]) : 0.0;
        }
        thomas(std::move(lower), std::move(diag), std::move(upper), rhs_in_out);
        return;
    }
    if (refactor) {
        const auto size = drift_.rows();
        SparseMatrix identity(size, size);
        identity.setIdentity();
        SparseMatrix jacobian =
            identity - dt * (drift_ + SparseMatrix(problem_.grid.laplacian() * s.asDiagonal()));
        jacobian.makeCompressed();
        if (!ws.analyzed) {
            ws.lu.analyzePattern(jacobian);
            ws.analyzed = true;
        }
        ws.lu.factorize(jacobian);
        if (ws.lu.info() != Eigen::Success) {
            throw StepFailure("Newton Jacobian factorization failed", {});
        }
    }
    rhs_in_out = ws.lu.solve(rhs_in_out);
}

StepResult ImplicitStepper::step(const GridField& state, std::span<const double> dw,
                                 double dt) const {
    const auto& grid = problem_.grid;
    if (!state.all_finite()) throw StepFailure("state is not finite", {});
    const Eigen::VectorXd b = rhs(state, dw);
    if (!b.allFinite()) throw StepFailure("noise increment is not finite", {});

    StepResult result{GridField(grid.spec())};
    if ((b.array() == 0.0).all()) return result;  // 0 is a fixed point

    const double scale = std::sqrt(grid.smallest_eigenvalue());
    const double rhs_norm = grid.h_minus1_norm(b);
    result.target = config_.newton_tol * std::max(rhs_norm, DBL_MIN);

    Workspace ws;
    Eigen::VectorXd y = state.vec();
    Eigen::VectorXd psi, slope;
    std::vector<double> trace;
    try {
        evaluate_psi(y, psi, &slope);
        Eigen::VectorXd lap_psi = grid.laplacian() * psi;
        Eigen::VectorXd drift_y = drift_ * y;
        Eigen::VectorXd f = y - dt * (drift_y + lap_psi) - b;
        double fnorm = grid.h_minus1_norm(f);
        trace.push_back(fnorm);

        int it = 0;
        while (fnorm > result.target) {
            if (it == config_.newton_max_iters) {
                throw StepFailure("Newton did not converge in " + std::to_string(it) +
                                      " iterations (residual " + describe(fnorm) + ", target " +
                                      describe(result.target) + ")",
                                  trace);
            }
            Eigen::VectorXd delta = -f;
            solve_linear(slope, dt, delta, ws, !config_.freeze_jacobian || it < 3);
            ++it;

            bool accepted = false;
            double alpha = 1.0;
            Eigen::VectorXd y_try, psi_try, slope_try, lap_try, drift_try, f_try;
            for (int bt = 0; bt <= kMaxBacktracks; ++bt, alpha *= 0.5) {
                y_try = y + alpha * delta;
                evaluate_psi(y_try, psi_try, &slope_try);
                lap_try = grid.laplacian() * psi_try;
                drift_try = drift_ * y_try;
                f_try = y_try - dt * (drift_try + lap_try) - b;
                const double norm_try = grid.h_minus1_norm(f_try);
                if (norm_try <= (1.0 - kArmijo * alpha) * fnorm) {
                    y.swap(y_try);
                    psi.swap(psi_try);
                    slope.swap(slope_try);
                    lap_psi.swap(lap_try);
                    drift_y.swap(drift_try);
                    f.swap(f_try);
                    fnorm = norm_try;
                    accepted = true;
                    break;
                }
            }
            trace.push_back(fnorm);
            if (!accepted) {
                // No descent left: accept only if the residual sits at the
                // cancellation floor of the terms making up F.
                const double h_d = std::sqrt(grid.spec().cell_volume());
                const double floor = 1e3 * DBL_EPSILON * h_d *
                                     (y.norm() + b.norm() + dt * (drift_y.norm() + lap_psi.norm())) /
                                     scale;
                if (fnorm <= floor) {
                    result.roundoff_limited = true;
                    break;
                }
                throw StepFailure("Newton line search stalled at residual " + describe(fnorm) +
                                      " (target " + describe(result.target) + ")",
                                  trace);
            }
        }
        result.newton_iterations = it;
        result.residual = fnorm;
    } catch (const ResolventError& e) {
        throw StepFailure(std::string("resolvent evaluation failed: ") + e.what(), trace);
    }
    result.state = GridField(grid.spec(), std::move(y));
    return result;
}

// ---------------------------------------------------------------------------
// Paths

double l1pm_exponent(const MonotoneGraph& graph) { return 1.0 + graph.growth_exponent(); }

NormSample measure(const GridOperators& grid, const MonotoneGraph& graph, const GridField& u) {
    return {grid.l2_norm(u), grid.h_minus1_norm(u), grid.lp_norm(u, l1pm_exponent(graph)),
            grid.h1_seminorm(u)};
}

SimulationPath simulate_path(const GridField& x0, const ImplicitStepper& stepper,
                             std::uint64_t seed, std::uint64_t path_index) {
    const auto& problem = stepper.problem();
    const auto& cfg = stepper.config();
    const auto& grid = problem.grid;
    if (!(x0.spec() == grid.spec())) throw std::invalid_argument("initial state on a different grid");
    if (!x0.all_finite()) throw std::invalid_argument("initial state is not finite");

    SimulationPath path;
    path.seed = seed;
    path.path_index = path_index;
    const int steps = cfg.step_count();
    const int n_noise = problem.fields.count();

    GridField state = x0;
    bool pinned = false;
    NormSample norms = measure(grid, problem.graph, state);
    if (norms.hminus1 <= cfg.extinction_eps) {
        pinned = true;
        path.extinction_time = 0.0;
        state = GridField(grid.spec());
        norms = NormSample{0.0, 0.0, 0.0, 0.0};
    }
    double cumulative = 0.0;
    const auto record = [&](double t) {
        path.times.push_back(t);
        path.l2.push_back(norms.l2);
        path.hminus1.push_back(norms.hminus1);
        path.l1pm.push_back(norms.l1pm);
        path.h1semi.push_back(norms.h1semi);
        path.cumulative_h1.push_back(cumulative);
        if (cfg.keep_snapshots) path.snapshots.push_back(state);
    };
    record(0.0);

    for (int k = 0; k < steps; ++k) {
        const double t_next = static_cast<double>(k + 1) * cfg.dt;
        if (!pinned) {
            const auto dw = n_noise > 0
                                ? brownian_increments(StreamKey{seed, StreamPurpose::brownian, path_index,
                                                                static_cast<std::uint64_t>(k)},
                                                      n_noise, cfg.dt)
                                : std::vector<double>{};
            const double h1_before = norms.h1semi;
            try {
                auto result = stepper.step(state, dw);
                path.total_newton_iterations += result.newton_iterations;
                state = std::move(result.state);
            } catch (const StepFailure& first) {
                // Retry as two half steps on a Brownian bridge split of dW.
                CounterRng bridge(StreamKey{seed, StreamPurpose::brownian_bridge, path_index,
                                            static_cast<std::uint64_t>(k)});
                std::vector<double> dw1(dw.size()), dw2(dw.size());
                const double spread = std::sqrt(cfg.dt / 4.0);
                for (std::size_t i = 0; i < dw.size(); ++i) {
                    dw1[i] = 0.5 * dw[i] + spread * bridge.normal();
                    dw2[i] = dw[i] - dw1[i];
                }
                try {
                    auto half = stepper.step(state, dw1, 0.5 * cfg.dt);
                    auto second = stepper.step(half.state, dw2, 0.5 * cfg.dt);
                    path.total_newton_iterations += half.newton_iterations + second.newton_iterations;
                    state = std::move(second.state);
                    ++path.halved_steps;
                } catch (const StepFailure& again) {
                    throw StepFailure("step " + std::to_string(k) + " failed twice: " + first.what() +
                                          "; after halving: " + again.what(),
                                      again.residual_trace);
                }
            }
            norms = measure(grid, problem.graph, state);
            if (norms.hminus1 <= cfg.extinction_eps) {
                pinned = true;
                path.extinction_time = t_next;
                state = GridField(grid.spec());
                norms = NormSample{0.0, 0.0, 0.0, 0.0};
            }
            cumulative += 0.5 * cfg.dt * (h1_before * h1_before + norms.h1semi * norms.h1semi);
        }
        if ((k + 1) % cfg.record_every == 0 || k + 1 == steps) record(t_next);
    }
    return path;
}

// ---------------------------------------------------------------------------
// Ensembles

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SPME_THREADS")) {
        char* end = nullptr;
        const long value = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && value > 0 && value <= 1024) return static_cast<int>(value);
    }
    return 1;
}

namespace {

// Runs job(i) for i in [0, count) on `threads` workers; results are written
// into caller-owned slots, so scheduling order never leaks into outputs.
template <class Job>
void parallel_for(int count, int threads, Job&& job) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        workers.emplace_back([&] {
            for (int i = next++; i < count; i = next++) job(i);
        });
    }
    for (auto& worker : workers) worker.join();
}

void check_failure_budget(const std::vector<PathFailure>& failures, int n_paths) {
    if (static_cast<double>(failures.size()) > 0.01 * n_paths) {
        std::string msg = std::to_string(failures.size()) + " of " + std::to_string(n_paths) +
                          " paths failed";
        if (!failures.empty()) {
            msg += " (first: path " + std::to_string(failures.front().path_index) + ": " +
                   failures.front().message + ")";
        }
        throw MonteCarloError(msg, failures);
    }
}

}  // namespace

Ensemble monte_carlo(const GridField& x0, const ImplicitStepper& stepper, int n_paths,
                     std::uint64_t seed, int threads) {
    if (n_paths < 1) throw std::invalid_argument("monte_carlo requires n_paths >= 1");
    std::vector<std::optional<SimulationPath>> slots(static_cast<std::size_t>(n_paths));
    std::vector<std::string> errors(static_cast<std::size_t>(n_paths));
    parallel_for(n_paths, resolve_threads(threads), [&](int i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            slots[idx] = simulate_path(x0, stepper, seed, static_cast<std::uint64_t>(i));
        } catch (const StepFailure& e) {
            errors[idx] = e.what();
        }
    });

    Ensemble out;
    for (int i = 0; i < n_paths; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        if (slots[idx]) {
            out.paths.push_back(std::move(*slots[idx]));
        } else {
            out.failures.push_back({static_cast<std::uint64_t>(i), errors[idx]});
        }
    }
    check_failure_budget(out.failures, n_paths);
    if (out.paths.empty()) throw MonteCarloError("every path failed", out.failures);

    out.times = out.paths.front().times;
    out.l2 = ensemble_statistic(out, [](const SimulationPath& p, std::size_t t) { return p.l2[t]; });
    out.hminus1 = ensemble_statistic(out, [](const SimulationPath& p, std::size_t t) { return p.hminus1[t]; });
    out.l1pm = ensemble_statistic(out, [](const SimulationPath& p, std::size_t t) { return p.l1pm[t]; });
    out.h1semi = ensemble_statistic(out, [](const SimulationPath& p, std::size_t t) { return p.h1semi[t]; });
    out.cumulative_h1 =
        ensemble_statistic(out, [](const SimulationPath& p, std::size_t t) { return p.cumulative_h1[t]; });
    return out;
}

CauchyReport yosida_continuation(const GridField& x0, const SpdeProblem& problem,
                                 const SolverConfig& base, std::span<const double> lambdas,
                                 int n_paths, std::uint64_t seed, int threads) {
    if (lambdas.size() < 2) throw std::invalid_argument("continuation needs at least two lambdas");
    for (std::size_t k = 0; k + 1 < lambdas.size(); ++k) {
        if (!(lambdas[k + 1] <= lambdas[k])) {
            throw std::invalid_argument("continuation lambdas must be non-increasing");
        }
    }
    if (n_paths < 1) throw std::invalid_argument("continuation requires n_paths >= 1");

    std::vector<ImplicitStepper> steppers;
    steppers.reserve(lambdas.size());
    for (double lambda : lambdas) {
        SolverConfig cfg = base;
        cfg.lambda = lambda;
        cfg.record_every = 1;
        cfg.keep_snapshots = true;
        steppers.emplace_back(problem, cfg);
    }

    const std::size_t pairs = lambdas.size() - 1;
    std::vector<std::vector<double>> sup_sq(static_cast<std::size_t>(n_paths));
    std::vector<std::string> errors(static_cast<std::size_t>(n_paths));
    parallel_for(n_paths, resolve_threads(threads), [&](int i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            std::optional<SimulationPath> previous;
            std::vector<double> sups;
            for (const auto& stepper : steppers) {
                SimulationPath current = simulate_path(x0, stepper, seed, static_cast<std::uint64_t>(i));
                if (previous) {
                    double sup = 0.0;
                    for (std::size_t t = 0; t < current.snapshots.size(); ++t) {
                        const Eigen::VectorXd diff =
                            previous->snapshots[t].vec() - current.snapshots[t].vec();
                        const double d = problem.grid.h_minus1_norm(diff);
                        sup = std::max(sup, d * d);
                    }
                    sups.push_back(sup);
                }
                previous = std::move(current);
            }
            sup_sq[idx] = std::move(sups);
        } catch (const StepFailure& e) {
            errors[idx] = e.what();
        }
    });

    CauchyReport report;
    report.lambdas.assign(lambdas.begin(), lambdas.end());
    std::vector<std::size_t> ok;
    for (int i = 0; i < n_paths; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        if (sup_sq[idx].size() == pairs) {
            ok.push_back(idx);
        } else {
            report.failures.push_back({static_cast<std::uint64_t>(i), errors[idx]});
        }
    }
    check_failure_budget(report.failures, n_paths);
    if (ok.empty()) throw MonteCarloError("every path failed", report.failures);
    report.n_paths = static_cast<int>(ok.size());

    const auto n = static_cast<double>(ok.size());
    for (std::size_t k = 0; k < pairs; ++k) {
        detail::CompensatedSum sum;
        for (auto idx : ok) sum.add(sup_sq[idx][k]);
        const double mean = sum.value() / n;
        detail::CompensatedSum sq;
        for (auto idx : ok) sq.add((sup_sq[idx][k] - mean) * (sup_sq[idx][k] - mean));
        const double se = ok.size() > 1 ? std::sqrt(sq.value() / (n - 1.0) / n) : 0.0;
        report.distance.push_back(mean);
        report.distance_stderr.push_back(se);
        const double ratio = mean / (lambdas[k] + lambdas[k + 1]);
        report.ratio.push_back(ratio);
        report.max_ratio = std::max(report.max_ratio, ratio);
    }
    report.strictly_decreasing = true;
    for (std::size_t k = 0; k + 1 < report.distance.size(); ++k) {
        if (!(report.distance[k + 1] < report.distance[k])) report.strictly_decreasing = false;
    }
    return report;
}

}  // namespace spme
