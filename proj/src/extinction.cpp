#include "spme/extinction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <variant>

#include "spme/rng.hpp"

namespace spme {

namespace {

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

// Evaluates the Sobolev ratio and keeps the minimum seen so far.
class RatioTracker {
public:
    RatioTracker(const GridOperators& grid, double m) : grid_(grid), m_(m) {}

    struct Parts {
        double p;  // h^d sum |y|^{1+m}
        double q;  // |y|_{-1}^2
        Eigen::VectorXd gy;
        double ratio;
    };

    std::optional<Parts> parts(const Eigen::VectorXd& y) const {
        const double w = grid_.spec().cell_volume();
        double p = 0.0;
        for (double v : y) p += std::pow(std::abs(v), 1.0 + m_);
        p *= w;
        Eigen::VectorXd gy = grid_.poisson_solve(y);
        const double q = w * y.dot(gy);
        if (!(p > 0.0) || !(q > 0.0) || !std::isfinite(p) || !std::isfinite(q)) return std::nullopt;
        return Parts{p, q, std::move(gy), p / std::pow(q, 0.5 * (1.0 + m_))};
    }

    void offer(const Eigen::VectorXd& y, double ratio, const char* source) {
        ++evaluations;
        if (ratio < best_ratio) {
            best_ratio = ratio;
            best = y;
            best_source = source;
        }
    }

    void offer(const Eigen::VectorXd& y, const char* source) {
        if (auto r = parts(y)) offer(y, r->ratio, source);
    }

    double best_ratio = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best;
    std::string best_source;
    std::size_t evaluations = 0;

private:
    const GridOperators& grid_;
    double m_;
};

Eigen::VectorXd random_field(const GridOperators& grid, CounterRng& rng, int kind) {
    const auto& spec = grid.spec();
    const auto size = static_cast<Eigen::Index>(spec.size());
    const int d = spec.dimension();
    Eigen::VectorXd y = Eigen::VectorXd::Zero(size);
    switch (kind) {
        case 0:  // white noise
            for (Eigen::Index i = 0; i < size; ++i) y[i] = rng.normal();
            break;
        case 1: {  // a few low modes with decaying weights
            const int modes = 1 + static_cast<int>(rng.below(8));
            for (int j = 0; j < modes; ++j) {
                const int k = 1 + static_cast<int>(rng.below(6));
                const int l = d == 2 ? 1 + static_cast<int>(rng.below(6)) : 1;
                y += (rng.normal() / (k * l)) * grid.eigenmode(k, l).vec();
            }
            break;
        }
        case 2: {  // Gaussian bump of random width
            const double cx = rng.uniform();
            const double cy = rng.uniform();
            const double width = std::exp(std::log(spec.h()) + rng.uniform() * (std::log(0.5) - std::log(spec.h())));
            for (std::size_t p = 0; p < spec.size(); ++p) {
                const auto xi = spec.coordinate(p);
                double r2 = (xi[0] - cx) * (xi[0] - cx);
                if (d == 2) r2 += (xi[1] - cy) * (xi[1] - cy);
                y[static_cast<Eigen::Index>(p)] = std::exp(-0.5 * r2 / (width * width));
            }
            break;
        }
        default: {  // a few spikes
            const int spikes = 1 + static_cast<int>(rng.below(4));
            for (int j = 0; j < spikes; ++j) {
                y[static_cast<Eigen::Index>(rng.below(spec.size()))] += rng.normal();
            }
            break;
        }
    }
    return y;
}

// Multiplicative descent in log|y|: zeros and signs are preserved.
void descend(const GridOperators& grid, double m, int iterations, RatioTracker& tracker) {
    if (tracker.best.size() == 0) return;
    Eigen::VectorXd y = tracker.best / tracker.best.cwiseAbs().maxCoeff();
    auto current = tracker.parts(y);
    if (!current) return;
    const double w = grid.spec().cell_volume();
    const auto nodes = static_cast<double>(y.size());
    double eta = 1.0;
    int stalls = 0;
    for (int it = 0; it < iterations && eta > 1e-12; ++it) {
        Eigen::VectorXd g(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double p_i = w * std::pow(std::abs(y[i]), 1.0 + m) / current->p;
            const double q_i = w * y[i] * current->gy[i] / current->q;
            g[i] = (1.0 + m) * (p_i - q_i) * nodes;
        }
        bool improved = false;
        while (eta > 1e-12) {
            Eigen::VectorXd trial(y.size());
            for (Eigen::Index i = 0; i < y.size(); ++i) {
                trial[i] = y[i] * std::exp(std::clamp(-eta * g[i], -5.0, 5.0));
            }
            trial /= trial.cwiseAbs().maxCoeff();
            auto next = tracker.parts(trial);
            if (next) tracker.offer(trial, next->ratio, "descent");
            if (next && next->ratio < current->ratio) {
                const double gain = (current->ratio - next->ratio) / current->ratio;
                stalls = gain < 1e-13 ? stalls + 1 : 0;
                y = std::move(trial);
                current = std::move(next);
                eta *= 2.0;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        if (!improved || stalls >= 10) break;
    }
}

}  // namespace

bool dimension_condition(int dimension, double m) {
    if (dimension < 1) return false;
    if (m >= 1.0) return true;
    return static_cast<double>(dimension) < 2.0 * (1.0 + m) / (1.0 - m);
}

std::string dimension_diagnostic(int dimension, double m) {
    if (dimension_condition(dimension, m)) return {};
    const double limit = 2.0 * (1.0 + m) / (1.0 - m);
    std::string msg = "dimension condition 1 <= d < 2(1+m)/(1-m) fails for d = " +
                      std::to_string(dimension) + ", m = " + fmt(m) + " (upper limit " + fmt(limit) + ")";
    if (limit <= 2.0) msg += ": m = " + fmt(m) + " imposes d = 1";
    return msg;
}

double sobolev_ratio(const GridOperators& grid, const GridField& y, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("sobolev_ratio requires m in [0, 1]");
    if (y.is_zero()) throw std::invalid_argument("sobolev_ratio is undefined for y = 0");
    const double num = std::pow(grid.lp_norm(y, 1.0 + m), 1.0 + m);
    return num / std::pow(grid.h_minus1_norm(y), 1.0 + m);
}

CmEstimate estimate_Cm(const GridOperators& grid, double m, const CmSearchOptions& options) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("estimate_Cm requires m in [0, 1]");
    const int d = grid.spec().dimension();
    if (!dimension_condition(d, m)) throw DimensionConditionError(dimension_diagnostic(d, m));

    RatioTracker tracker(grid, m);
    double eigen_min = std::numeric_limits<double>::infinity();
    for (const auto& pair : grid.eigen_cache(options.max_eigenmodes)) {
        if (auto r = tracker.parts(pair.mode.vec())) {
            tracker.offer(pair.mode.vec(), r->ratio, "eigenmode");
            eigen_min = std::min(eigen_min, r->ratio);
        }
    }

    const auto size = static_cast<Eigen::Index>(grid.spec().size());
    if (options.point_masses) {
        for (Eigen::Index i = 0; i < size; ++i) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(size);
            e[i] = 1.0;
            tracker.offer(e, "point_mass");
        }
    }

    for (int r = 0; r < options.random_fields; ++r) {
        CounterRng rng(StreamKey{options.seed, StreamPurpose::sobolev_search, static_cast<std::uint64_t>(r)});
        tracker.offer(random_field(grid, rng, r % 4), "random");
    }

    descend(grid, m, options.descent_iterations, tracker);

    CmEstimate out;
    out.raw = tracker.best_ratio;
    out.value = 0.9 * tracker.best_ratio;
    out.eigen_min = eigen_min;
    out.source = tracker.best_source;
    out.evaluations = tracker.evaluations;
    out.best = tracker.best;
    return out;
}

ExtinctionSetup make_extinction_setup(const GridOperators& grid, const MonotoneGraph& graph,
                                      double c2, double x0_hminus1, double eps_rel,
                                      const CmSearchOptions& options) {
    ExtinctionSetup setup;
    if (const auto* fd = std::get_if<FastDiffusion>(&graph.variant())) {
        setup.m = fd->m;
        setup.rho = fd->rho;
    } else if (const auto* sg = std::get_if<Sign>(&graph.variant())) {
        setup.m = 0.0;
        setup.rho = sg->rho;
    } else {
        throw std::invalid_argument("extinction analysis needs a fast_diffusion or sign graph, got " +
                                    std::string(graph.kind()));
    }
    if (!(c2 >= 0.0) || !std::isfinite(c2)) throw std::invalid_argument("C2 must be finite and >= 0");
    if (!(eps_rel >= 0.0)) throw std::invalid_argument("extinction eps_rel must be >= 0");
    const int d = grid.spec().dimension();
    setup.dimension_ok = dimension_condition(d, setup.m);
    if (!setup.dimension_ok) throw DimensionConditionError(dimension_diagnostic(d, setup.m));
    setup.c2 = c2;
    setup.K_m = c2 * (1.0 - setup.m) / 2.0;
    const auto cm = estimate_Cm(grid, setup.m, options);
    setup.C_m_raw = cm.raw;
    setup.C_m = cm.value;
    setup.extinction_eps = eps_rel * x0_hminus1;
    return setup;
}

double theoretical_bound(double x0_hminus1, const ExtinctionSetup& setup, double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("theoretical_bound requires t > 0");
    if (!(x0_hminus1 >= 0.0)) throw std::invalid_argument("|x0|_{-1} must be >= 0");
    if (x0_hminus1 == 0.0) return 0.0;
    const double one_minus_m = 1.0 - setup.m;
    const double k = setup.K_m;
    // K / (1 - e^{-K t}) -> 1/t as K -> 0.
    const double factor = k > 0.0 ? k / -std::expm1(-k * t) : 1.0 / t;
    const double bound =
        std::pow(x0_hminus1, one_minus_m) * factor / (setup.rho * setup.C_m * one_minus_m);
    return std::clamp(bound, 0.0, 1.0);
}

std::vector<std::optional<double>> extinction_times(const Ensemble& ensemble, double eps) {
    std::vector<std::optional<double>> out;
    out.reserve(ensemble.paths.size());
    for (const auto& path : ensemble.paths) {
        std::optional<double> tau;
        for (std::size_t t = 0; t < path.times.size(); ++t) {
            if (path.hminus1[t] <= eps) {
                tau = path.times[t];
                break;
            }
        }
        out.push_back(tau);
    }
    return out;
}

SurvivalCurve survival_from_times(const std::vector<std::optional<double>>& taus,
                                  const std::vector<double>& time_grid) {
    SurvivalCurve curve;
    curve.times = time_grid;
    const auto n = static_cast<double>(taus.size());
    for (double t : time_grid) {
        std::size_t alive = 0;
        for (const auto& tau : taus) {
            if (!tau || *tau > t) ++alive;
        }
        const double p = taus.empty() ? 0.0 : static_cast<double>(alive) / n;
        curve.survival.push_back(p);
        curve.std_error.push_back(taus.empty() ? 0.0 : std::sqrt(p * (1.0 - p) / n));
    }
    return curve;
}

SurvivalCurve survival_curve(const Ensemble& ensemble, double eps,
                             const std::vector<double>& time_grid) {
    return survival_from_times(extinction_times(ensemble, eps), time_grid);
}

SupermartingaleSeries supermartingale_check(const Ensemble& ensemble, double m, double c2,
                                            int checkpoints) {
    SupermartingaleSeries out;
    const std::size_t n_times = ensemble.times.size();
    std::vector<std::size_t> idx;
    if (checkpoints <= 0 || static_cast<std::size_t>(checkpoints) >= n_times) {
        for (std::size_t t = 0; t < n_times; ++t) idx.push_back(t);
    } else if (checkpoints == 1) {
        idx.push_back(0);
    } else {
        for (int j = 0; j < checkpoints; ++j) {
            const auto t = static_cast<std::size_t>(std::llround(
                static_cast<double>(j) * static_cast<double>(n_times - 1) / (checkpoints - 1)));
            if (idx.empty() || idx.back() != t) idx.push_back(t);
        }
    }
    const auto stats = ensemble_statistic(ensemble, [&](const SimulationPath& p, std::size_t t) {
        return std::pow(std::exp(-0.5 * c2 * p.times[t]) * p.hminus1[t], 1.0 - m);
    });
    for (auto t : idx) {
        out.times.push_back(ensemble.times[t]);
        out.mean.push_back(stats.mean[t]);
        out.std_error.push_back(stats.std_error[t]);
    }
    out.worst_excess = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < out.mean.size(); ++k) {
        const double excess =
            out.mean[k + 1] - out.mean[k] - 2.0 * std::hypot(out.std_error[k], out.std_error[k + 1]);
        out.worst_excess = std::max(out.worst_excess, excess);
        if (excess > 0.0) out.passes = false;
    }
    if (out.mean.size() < 2) out.worst_excess = 0.0;
    return out;
}

ExtinctionVerdict verify_extinction_bound(const Ensemble& ensemble, const ExtinctionSetup& setup,
                                          double x0_hminus1, double eps) {
    if (!setup.dimension_ok) throw DimensionConditionError("extinction setup fails the dimension condition");
    ExtinctionVerdict verdict;
    std::vector<double> grid;
    for (double t : ensemble.times) {
        if (t > 0.0) grid.push_back(t);
    }
    const auto taus = extinction_times(ensemble, eps);
    verdict.survival = survival_from_times(taus, grid);
    verdict.extinction_observed = std::any_of(taus.begin(), taus.end(), [](const auto& t) { return t.has_value(); });
    verdict.extinct_fraction = grid.empty() ? 0.0 : 1.0 - verdict.survival.survival.back();
    verdict.worst_margin = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double bound = theoretical_bound(x0_hminus1, setup, grid[k]);
        verdict.bound.push_back(bound);
        if (bound >= 1.0) continue;
        verdict.informative = true;
        const double margin =
            verdict.survival.survival[k] - bound - 3.0 * verdict.survival.std_error[k];
        verdict.worst_margin = std::max(verdict.worst_margin, margin);
        if (margin > 0.0) verdict.passes = false;
    }
    if (!verdict.informative) verdict.worst_margin = 0.0;
    return verdict;
}

std::vector<double> extinction_integrand(const SimulationPath& path, const ExtinctionSetup& setup, double t) {
    std::vector<double> out;
    for (std::size_t k = 0; k < path.times.size() && path.times[k] <= t; ++k) {
        if (!(path.hminus1[k] > 0.0)) continue;
        out.push_back(std::exp(setup.K_m * (t - path.times[k])) *
                      std::pow(path.hminus1[k], -setup.m - 1.0) *
                      std::pow(path.l1pm[k], setup.m + 1.0));
    }
    return out;
}

}  // namespace spme
