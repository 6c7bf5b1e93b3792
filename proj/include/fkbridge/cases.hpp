#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fkbridge/grid.hpp"
#include "fkbridge/kernel.hpp"
#include "fkbridge/potentials.hpp"

namespace fkbridge {

/// A closed-form reference case.
///
/// Quantities (by name): rho, f, g, b (forward drift), c (potential),
/// v (current velocity), R, S (Madelung pair, g = e^{R+S}, f = e^{R-S}),
/// ground_state, eigenvalue. Only the names listed in `quantities` are
/// available for a given case.
struct CaseDefinition {
    std::string name;
    PotentialSpec potential;
    TimeGrid window;
    std::vector<std::string> quantities;
    /// One interval, or two split at a node.
    std::vector<std::pair<double, double>> domain_components;
    /// Density nodes (points the process never reaches).
    std::vector<double> nodes;
    double gamma = 0.0;  // centrifugal
    double alpha = 0.0;  // moving node

    bool advertises(const std::string& quantity) const;
};

/// gaussian_spread, stable_node, harmonic, centrifugal (gamma), moving_node (alpha).
CaseDefinition make_case(const std::string& name, double gamma = 1.0, double alpha = 0.0);
std::vector<std::string> case_names();

/// Exact closed-form value. For `eigenvalue`, x is the level n (a nonnegative
/// integer) and t is ignored. Throws std::invalid_argument for a quantity the
/// case does not provide and std::domain_error at a node for b, S and R.
double evaluate_reference(const CaseDefinition& c, const std::string& quantity, double x, double t);

/// Samples a quantity on a grid at time t.
Profile sample_reference(const CaseDefinition& c, const std::string& quantity, const Grid& grid, double t);

/// Named pass/fail check with its measured value and tolerance.
struct Check {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double tolerance = 0.0;
    /// How value relates to tolerance when passing, e.g. "<=" or ">=".
    std::string relation = "<=";
    std::string detail;
};

struct DiagnosticReport {
    std::string name;
    std::vector<Check> checks;
    /// Verdict text for diagnostics that conclude something.
    std::string verdict;
    /// Extra measured series.
    nlohmann::json data = nlohmann::json::object();

    bool passed() const;
    /// First failing check, if any.
    std::optional<std::string> first_failure() const;
    void add(Check c) { checks.push_back(std::move(c)); }
    /// Adds value <= tol (or >= tol when at_least).
    void add(const std::string& name, double value, double tol, bool at_least = false,
             const std::string& detail = {});
    void merge(const DiagnosticReport& other, const std::string& prefix);
};

nlohmann::json to_json(const DiagnosticReport& r);

/// Settings shared by the nodal diagnostic.
struct NodalDiagnosticOptions {
    double x_max = 8.0;
    std::vector<std::size_t> resolutions{201, 401, 801};
    /// |x| window for the residual sup.
    double window = 0.5;
};

/// Whole-line propagation of f(., 0) under the Gaussian-case
/// potential (strictly positive fundamental solution), compared with the case's
/// own f(., T). Reports sup|r| near 0 against a refinement error estimate, the
/// first-difference jump of f(., T) at 0 and the jump witness of the propagated
/// function for each resolution. For stable_node the verdict is "kernel
/// inappropriate for nodal data" when the f jump converges to a nonzero value
/// (10x its refinement change), the propagated jump converges to 0 and
/// sup|r| exceeds 10x the quadrature error; otherwise "no contradiction".
/// The case must be gaussian_spread (control) or stable_node.
DiagnosticReport nodal_contradiction_diagnostic(const CaseDefinition& c, double T,
                                                const NodalDiagnosticOptions& opt = {});
DiagnosticReport nodal_contradiction_diagnostic(double T, const NodalDiagnosticOptions& opt = {});

/// Same residual with a caller-supplied kernel K(0, T) on a whole-line grid.
/// Throws IncompatibleDataError when the kernel is not strictly positive.
DiagnosticReport nodal_contradiction_diagnostic(const KernelMatrix& k, const CaseDefinition& c);

/// Centrifugal degeneracy: (i) finite-difference residual of the ground state
/// on the half-line `grid` (x_min > 0); (ii) Monte Carlo kernel from -1 to +1
/// and from 0.5 to 1 over tau. Block-diagonal verdict when the cross estimate
/// is within 3 standard errors of 0 and the same-side one is >= 5 standard
/// errors above 0. For gamma < 0 only (i) runs; gamma = 0 expects a positive
/// cross estimate instead.
DiagnosticReport degeneracy_block_check(double gamma, double tau, const Grid& grid,
                                        const McOptions& mc);

/// Moving node: unique zero of rho at (0, alpha); quantum potential of rho at
/// t = alpha against the t -> alpha limit on three refinements of `grid`
/// (component-wise, |x| in [0.5, 6]) with the measured order; energy identity.
DiagnosticReport moving_node_consistency(double alpha, const Grid& grid);

/// Closed-form identities: factorization f g = rho, drift 2 grad ln g = b,
/// Fokker-Planck residual, Madelung split, eigen residuals, as applicable.
DiagnosticReport closed_form_checks(const CaseDefinition& c);

struct PropertySuiteOptions {
    std::size_t nodes_per_component = 201;
    std::size_t slices = 5;
    double tol = 1e-10;
    std::uint64_t seed = 1;
};

/// Solves the bridge between the case's reference marginals (per domain
/// component) and checks convergence, agreement with the reference density,
/// mass conservation, gauge covariance, Markov composition and seed
/// determinism of simulation and Monte Carlo across worker counts.
DiagnosticReport property_suite(const CaseDefinition& c, const PropertySuiteOptions& opt = {});

/// Full battery for `validate`: closed-form checks, the case's structural
/// diagnostic and the property suite.
DiagnosticReport validate_case(const CaseDefinition& c);

}  // namespace fkbridge
