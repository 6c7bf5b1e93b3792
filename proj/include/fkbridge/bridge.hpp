#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fkbridge/grid.hpp"
#include "fkbridge/kernel.hpp"

namespace fkbridge {

/// Boundary data plus kernels. Slice k of `times` needs K(0, t_k) for k > 0
/// and K(t_k, T) for k < last; the endpoint slices use f and g directly.
struct BridgeProblem {
    Profile rho0;
    Profile rhoT;
    KernelMatrix kernel_0T;
    std::vector<double> times;
    std::vector<std::optional<KernelMatrix>> from_start;
    std::vector<std::optional<KernelMatrix>> to_end;
};

/// Endpoint-only problem (times = {s, t} of the kernel).
BridgeProblem make_bridge_problem(Profile rho0, Profile rhoT, KernelMatrix kernel_0T);
/// Problem with intermediate slices taken from a kernel sweep.
BridgeProblem make_bridge_problem(Profile rho0, Profile rhoT, KernelSweep sweep);

struct BridgeOptions {
    double tol = 1e-10;
    std::size_t max_iter = 10000;
    /// Marginal values below floor * peak are raised to it (then renormalized).
    double floor = 1e-14;
};

struct BridgeSolution {
    Profile f;  // time 0
    Profile g;  // time T
    std::vector<double> times;
    std::vector<Profile> theta;
    std::vector<Profile> theta_star;
    std::vector<Profile> rho;
    std::vector<Profile> drift;
    double marginal_residual = 0.0;
    std::size_t iterations = 0;
    std::vector<double> residual_history;
    /// integrate(f) == integrate(g) == gauge after the final rescaling.
    double gauge = 0.0;
    std::vector<std::string> warnings;
};

/// IPF did not reach tol; carries the last iterate with all slices filled in.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::shared_ptr<const BridgeSolution> partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    double residual() const noexcept { return partial_->marginal_residual; }
    std::size_t iterations() const noexcept { return partial_->iterations; }
    const BridgeSolution& partial() const noexcept { return *partial_; }

private:
    std::shared_ptr<const BridgeSolution> partial_;
};

/// Alternating scaling f <- rho0 / (K g), g <- rhoT / (K^T f) until the L1
/// residual of both marginal constraints is <= tol, then gauge fixing and
/// slice construction (theta = K(t,T) g, theta* = K(0,t)^T f, rho, drift).
///
/// Throws NodalDataError for marginals with interior zeros,
/// IncompatibleDataError for a zero or non-finite denominator and
/// ConvergenceError after max_iter iterations.
BridgeSolution solve_schrodinger_system(const BridgeProblem& prob, const BridgeOptions& opt = {});

/// L1 residual of both marginal constraints for a candidate pair.
double marginal_residual(const KernelMatrix& k, const Profile& rho0, const Profile& rhoT,
                         const Profile& f, const Profile& g);

/// theta(., t) = K(t, T) g and theta*(., t) = K(0, t)^T f; either kernel may
/// be null at the matching endpoint, where the factor itself is returned.
std::pair<Profile, Profile> propagate_theta(const Profile& f, const Profile& g, double time,
                                            const KernelMatrix* k_0t, const KernelMatrix* k_tT);

/// b = 2 d/dx ln theta (central differences, one-sided at the ends).
Profile drift_field(const Profile& theta);

/// Joint density m(x_i, y_j) = f_i K(i,j) g_j of the endpoints.
std::vector<double> joint_density(const KernelMatrix& k, const Profile& f, const Profile& g);

/// p(y_i, s, x_j, t) with rows integrating to one.
struct TransitionDensity {
    Grid grid;
    double s = 0.0;
    double t = 0.0;
    std::vector<double> entries;
    /// Largest |row integral - 1| before renormalization, over checked rows.
    double max_row_deviation = 0.0;

    std::size_t size() const noexcept { return grid.size(); }
    double operator()(std::size_t i, std::size_t j) const noexcept {
        return entries[i * grid.size() + j];
    }
    /// rho_t(x_j) = sum_i w_i rho_s(y_i) p(i, j).
    Profile propagate(const Profile& rho_s) const;
};

struct TransitionOptions {
    /// Rows deviating from unit mass by more than this are an error.
    double row_tol = 1e-5;
    /// Only rows with y inside the window are checked and renormalized.
    std::optional<std::pair<double, double>> check_window;
};

/// p(i, j) = K(i, j) theta_t(j) / theta_s(i).
TransitionDensity transition_density(const KernelMatrix& k, const Profile& theta_t,
                                     const Profile& theta_s, const TransitionOptions& opt = {});

/// p_su(i, j) = sum_k p_st(i, k) w_k p_tu(k, j).
TransitionDensity compose(const TransitionDensity& p_st, const TransitionDensity& p_tu);

/// One CSV per slice (`slice_000.csv`, ...) with columns
/// x,theta,theta_star,rho,drift and a `# time=` line.
void write_solution_slices(const BridgeSolution& sol, const std::string& dir);

/// Slices written by write_solution_slices, in time order.
struct StoredSlices {
    std::vector<double> times;
    std::vector<Profile> rho;
    std::vector<Profile> drift;
};
StoredSlices read_solution_slices(const std::string& dir);

}  // namespace fkbridge
