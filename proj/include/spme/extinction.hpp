#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spme/grid.hpp"
#include "spme/monotone.hpp"
#include "spme/solver.hpp"

namespace spme {

/// 1 <= d < 2(1+m)/(1-m).
bool dimension_condition(int dimension, double m);
/// Empty when the condition holds, otherwise a readable diagnostic.
std::string dimension_diagnostic(int dimension, double m);

class DimensionConditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// |y|_{1+m}^{1+m} / |y|_{-1}^{1+m}; degree-0 homogeneous. Throws on y = 0.
double sobolev_ratio(const GridOperators& grid, const GridField& y, double m);

struct CmSearchOptions {
    int random_fields = 10000;
    std::uint64_t seed = 1;
    int descent_iterations = 400;
    std::size_t max_eigenmodes = 4096;
    bool point_masses = true;
};

struct CmEstimate {
    double raw = 0.0;      // smallest ratio found
    double value = 0.0;    // 0.9 * raw, used in verdicts
    double eigen_min = 0.0;
    std::string source;    // eigenmode | point_mass | random | descent
    std::size_t evaluations = 0;
    Eigen::VectorXd best;  // minimizing field found
};

/// Minimum of sobolev_ratio over eigenmodes, point masses, random fields and a
/// sign-preserving multiplicative descent from the best candidate. m in [0, 1].
CmEstimate estimate_Cm(const GridOperators& grid, double m, const CmSearchOptions& options = {});

struct ExtinctionSetup {
    double m = 0.5;
    double rho = 1.0;
    double c2 = 0.0;
    double K_m = 0.0;      // C2 (1-m)/2
    double C_m = 0.0;      // safety-factored estimate
    double C_m_raw = 0.0;
    bool dimension_ok = false;
    double extinction_eps = 0.0;
};

/// Builds the setup for a fast diffusion or sign graph. Throws
/// DimensionConditionError when the dimension condition fails and
/// std::invalid_argument for other graph kinds.
ExtinctionSetup make_extinction_setup(const GridOperators& grid, const MonotoneGraph& graph,
                                      double c2, double x0_hminus1, double eps_rel = 1e-8,
                                      const CmSearchOptions& options = {});

/// P(tau > t) <= K |x|_{-1}^{1-m} / (rho C_m (1-m)(1 - e^{-K t})), clamped to [0, 1].
double theoretical_bound(double x0_hminus1, const ExtinctionSetup& setup, double t);

struct SurvivalCurve {
    std::vector<double> times;
    std::vector<double> survival;
    std::vector<double> std_error;
};

/// tau per path: first recorded instant with |X|_{-1} <= eps (exact when record_every = 1).
std::vector<std::optional<double>> extinction_times(const Ensemble& ensemble, double eps);
SurvivalCurve survival_from_times(const std::vector<std::optional<double>>& taus,
                                  const std::vector<double>& time_grid);
SurvivalCurve survival_curve(const Ensemble& ensemble, double eps,
                             const std::vector<double>& time_grid);

struct SupermartingaleSeries {
    std::vector<double> times;
    std::vector<double> mean;
    std::vector<double> std_error;
    bool passes = true;
    double worst_excess = 0.0;  // max of M_{k+1} - M_k - 2(se_k + se_{k+1})
};

/// Mean of (e^{-C2 t/2} |X(t)|_{-1})^{1-m} at `checkpoints` evenly spaced
/// recorded instants (all instants when checkpoints <= 0).
SupermartingaleSeries supermartingale_check(const Ensemble& ensemble, double m, double c2,
                                            int checkpoints = 0);

struct ExtinctionVerdict {
    bool passes = true;
    bool informative = false;         // bound < 1 somewhere
    bool extinction_observed = false;
    double extinct_fraction = 0.0;    // at the last instant
    double worst_margin = 0.0;        // max of survival - bound - 3 se where bound < 1
    SurvivalCurve survival;
    std::vector<double> bound;
};

ExtinctionVerdict verify_extinction_bound(const Ensemble& ensemble, const ExtinctionSetup& setup,
                                          double x0_hminus1, double eps);

/// e^{K(t - s)} |X(s)|_{-1}^{-m-1} |X(s)|_{m+1}^{m+1} at every recorded s <= t with |X(s)|_{-1} > 0.
std::vector<double> extinction_integrand(const SimulationPath& path, const ExtinctionSetup& setup, double t);

}  // namespace spme
