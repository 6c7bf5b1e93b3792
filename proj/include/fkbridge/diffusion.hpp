#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fkbridge/bridge.hpp"
#include "fkbridge/grid.hpp"
#include "fkbridge/potentials.hpp"

namespace fkbridge {

/// Forward drift b(x, t). Built either from stored slices (bilinear: linear in
/// x on the slice grid, linear in t between slices, constant outside) or from
/// a closed-form function.
class DriftField {
public:
    explicit DriftField(std::vector<Profile> slices);
    explicit DriftField(std::function<double(double, double)> fn);

    double operator()(double x, double t) const { return fn_(x, t); }

private:
    std::function<double(double, double)> fn_;
};

struct SimulationOptions {
    std::size_t n_paths = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    /// Recorded slices; the first is the start time.
    TimeGrid record{0.0, 1.0, 11};
    /// Paths leaving the open interval are absorbed (frozen as NaN).
    std::pair<double, double> domain{-8.0, 8.0};
    /// Points the drift must never carry a path across (density nodes).
    std::vector<double> nodes;
    /// Guard distance around nodes; <= 0 selects 2 spacings of the start grid.
    double guard = 0.0;
    std::size_t max_halvings = 20;
    /// Start every path here instead of sampling rho0.
    std::optional<double> start_point;
};

/// Simulated ensemble. positions[p * m + k] is path p at record slice k;
/// NaN once the path has been absorbed.
struct PathEnsemble {
    std::size_t n_paths = 0;
    TimeGrid times{0.0, 1.0, 2};
    std::vector<double> positions;
    std::uint64_t seed = 0;
    std::size_t n_absorbed = 0;
    /// Paths that hit the halving limit near a node at least once.
    std::size_t n_flagged = 0;
    /// Absorbed count at each record slice.
    std::vector<std::size_t> absorbed_by_slice;

    double at(std::size_t path, std::size_t slice) const noexcept {
        return positions[path * times.size() + slice];
    }
};

/// Euler-Maruyama X <- X + b(X, t) dt + sqrt(2 dt) xi.
///
/// Each record interval is split into ceil(interval / dt) equal steps. Start
/// points are drawn from rho0 by inverting its trapezoid CDF (density linear
/// per cell). A step that would cross a node or land within the guard distance
/// of it is redone as two half steps, recursively up to max_halvings times;
/// at the limit the path stays put for that sub-step and is flagged. Path i
/// uses its own stream derived from (seed, i), so the ensemble does not depend
/// on the worker count.
PathEnsemble simulate_paths(const DriftField& drift, const Profile& rho0,
                            const SimulationOptions& opt);

/// Gaussian kernel density estimate at record time t, on `grid`, normalized.
/// bandwidth <= 0 selects Silverman's rule; the bandwidth is never below one
/// grid spacing. Uses linear binning onto the grid, then a discrete convolution.
Profile empirical_density(const PathEnsemble& ens, double t, const Grid& grid,
                          double bandwidth = 0.0);

/// Per-slice mean and variance (n - 1) over surviving paths.
struct SliceStats {
    double t = 0.0;
    double mean = 0.0;
    double var = 0.0;
    std::size_t n_alive = 0;
    std::size_t n_absorbed = 0;
};
std::vector<SliceStats> slice_statistics(const PathEnsemble& ens);

/// Short-time diffusion conditions at (x0, s), each extrapolated linearly in
/// the increment tau = t - s to tau = 0:
///   escape_rate   = P(|X_t - x0| > eps) / tau            (-> 0)
///   drift_hat     = E[(X_t - x0); |X_t - x0| <= eps] / tau (-> b(x0, s))
///   diffusion_hat = E[(X_t - x0)^2; |X_t - x0| <= eps] / tau (-> 2)
struct MomentEstimates {
    double x0 = 0.0;
    double s = 0.0;
    double epsilon = 0.0;
    double escape_rate = 0.0;
    double drift_hat = 0.0;
    double diffusion_hat = 0.0;
    double escape_rate_se = 0.0;
    double drift_hat_se = 0.0;
    double diffusion_hat_se = 0.0;
    /// Raw per-increment values, in the order of `increments`.
    std::vector<double> increments;
    std::vector<double> escape_by_increment;
    std::vector<double> drift_by_increment;
    std::vector<double> diffusion_by_increment;
};

/// From transition densities p(., s, ., s + tau_k) (one per increment, all
/// starting at s). The row at x0 is interpolated linearly between nodes.
/// Standard errors are the intercept errors of the least-squares line.
MomentEstimates estimate_moments(std::span<const TransitionDensity> p, double x0, double s,
                                 double epsilon);

/// From an ensemble started at x0 at time s; every later record slice is one
/// increment. Standard errors are propagated from the per-slice sample errors.
MomentEstimates estimate_moments(const PathEnsemble& ens, double x0, double s, double epsilon);

/// p(., s, ., s + tau) for the process with kernel of `spec` and factor g at
/// time g.time: theta(s + tau) = K(s + tau, T) g by backward propagation and
/// theta(s) = K(s, s + tau) theta(s + tau), so rows integrate to one up to
/// truncation at the grid ends.
std::vector<TransitionDensity> short_time_transitions(const PotentialSpec& spec, const Profile& g,
                                                      double s, std::span<const double> taus);

/// Binary "FKE1": n_paths, m (u64), t0, t1 (f64), seed, n_absorbed, n_flagged
/// (u64), then n_paths * m float32 positions, path-major. Little-endian.
void write_ensemble_binary(std::ostream& out, const PathEnsemble& ens);
void write_ensemble_binary(const std::string& path, const PathEnsemble& ens);
PathEnsemble read_ensemble_binary(std::istream& in);
PathEnsemble read_ensemble_binary(const std::string& path);

/// CSV `t,mean,var,n_absorbed`, 17 digits.
void write_summary_csv(std::ostream& out, const PathEnsemble& ens);
void write_summary_csv(const std::string& path, const PathEnsemble& ens);

}  // namespace fkbridge
