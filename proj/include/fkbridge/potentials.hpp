#pragma once

#include <limits>
#include <memory>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "fkbridge/grid.hpp"

namespace fkbridge {

enum class PotentialKind {
    Free,
    Harmonic,      // x^2 - 1
    GaussianCase,  // x^2 / (2(1+t^2)^2) - 1/(1+t^2)
    NodalCase,     // x^2 / (2(1+t^2)^2) - 3/(1+t^2)
    Centrifugal,   // x^2 + 2 gamma / x^2 - E
    MovingNode,    // Laplacian(sqrt rho)/sqrt rho of the node-forming density, t -> t - alpha
    Tabulated,     // linear interpolation of sampled slices
};

/// Ground-state energy 2 + sqrt(1 + 8 gamma) of -Laplacian + x^2 + 2 gamma / x^2
/// on a half-line.
double centrifugal_ground_energy(double gamma);

/// Feynman-Kac potential c(x, t).
///
/// Immutable value type. Catalog potentials carry their energy subtraction
/// explicitly so kernels stay O(1) over a unit time window. Points where
/// c = +inf are listed in singular_set(); for the moving node the
/// singularity exists only at the instant singular_time().
class PotentialSpec {
public:
    static PotentialSpec free();
    static PotentialSpec harmonic();
    static PotentialSpec gaussian_case();
    static PotentialSpec nodal_case();
    /// Subtracts the ground-state energy centrifugal_ground_energy(gamma).
    static PotentialSpec centrifugal(double gamma);
    static PotentialSpec centrifugal(double gamma, double energy);
    static PotentialSpec moving_node(double alpha);
    /// Slices must share one grid and have strictly increasing times. A single
    /// slice is treated as time independent.
    static PotentialSpec tabulated(std::vector<Profile> slices);

    PotentialKind kind() const noexcept { return kind_; }
    std::string name() const;

    double gamma() const noexcept { return gamma_; }
    double energy() const noexcept { return energy_; }
    double alpha() const noexcept { return alpha_; }

    const std::vector<double>& singular_set() const noexcept { return singular_; }
    std::optional<double> singular_time() const noexcept { return singular_time_; }
    /// True when c = +inf on singular_set() at every time.
    bool has_static_singularities() const noexcept {
        return !singular_.empty() && !singular_time_;
    }

    double lower_bound() const noexcept { return lower_bound_; }
    bool time_dependent() const noexcept;

    /// Valid time window; infinite for the closed-form kinds.
    double window_begin() const noexcept { return window_begin_; }
    double window_end() const noexcept { return window_end_; }

    double operator()(double x, double t) const;

private:
    PotentialSpec() = default;

    PotentialKind kind_ = PotentialKind::Free;
    double gamma_ = 0.0;
    double energy_ = 0.0;
    double alpha_ = 0.0;
    std::vector<double> singular_;
    std::optional<double> singular_time_;
    double lower_bound_ = 0.0;
    double window_begin_ = -std::numeric_limits<double>::infinity();
    double window_end_ = std::numeric_limits<double>::infinity();
    std::shared_ptr<const std::vector<Profile>> table_;
};

/// c(x, t); +inf exactly on the singular set. Throws std::out_of_range for a
/// tabulated potential queried outside its window.
double evaluate_potential(const PotentialSpec& spec, double x, double t);

/// Laplacian(sqrt rho) / sqrt rho by second-order finite differences
/// (one-sided at the endpoints). rho must be strictly positive on the grid;
/// split nodal densities into components first.
Profile quantum_potential_from_density(const Profile& rho);

/// c = d/dt ln g + (b^2 / 2 + db/dx) / 2. Pass std::nullopt for stationary
/// problems (d/dt ln g = 0).
Profile potential_from_drift(const Profile& drift,
                             const std::optional<Profile>& dt_log_g = std::nullopt);

/// Second-order first derivative (central interior, one-sided endpoints).
std::vector<double> gradient(const Grid& grid, std::span<const double> values);
/// Second-order second derivative (central interior, one-sided endpoints).
std::vector<double> laplacian(const Grid& grid, std::span<const double> values);

}  // namespace fkbridge
