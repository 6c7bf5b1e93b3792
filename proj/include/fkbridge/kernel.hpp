#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fkbridge/grid.hpp"
#include "fkbridge/potentials.hpp"

namespace fkbridge {

/// Discretized Feynman-Kac kernel between two time slices:
/// entry(i, j) ~ k(y_i, s, x_j, t), rows indexed by the earlier point.
///
/// Quadrature convention: integrals over either variable use the grid's
/// trapezoid weights, so  int k(y,s,x,t) f(y) dy  ~  sum_i w_i K(i,j) f(y_i).
struct KernelMatrix {
    Grid grid;
    double s = 0.0;
    double t = 0.0;
    std::vector<double> entries;  // row-major n x n
    /// Largest magnitude of a negative entry that was clamped to zero.
    double clamped = 0.0;

    KernelMatrix(Grid grid, double s, double t, std::vector<double> entries);

    std::size_t size() const noexcept { return grid.size(); }
    double operator()(std::size_t i, std::size_t j) const noexcept {
        return entries[i * grid.size() + j];
    }
    std::span<const double> row(std::size_t i) const noexcept {
        return {entries.data() + i * grid.size(), grid.size()};
    }

    /// (K g)_i = sum_j K(i,j) w_j g_j  -- integrates over the later variable.
    std::vector<double> apply(std::span<const double> g) const;
    /// (K^T f)_j = sum_i w_i f_i K(i,j)  -- integrates over the earlier variable.
    std::vector<double> apply_transpose(std::span<const double> f) const;

    double min_entry() const noexcept;
};

/// Summary of a Monte Carlo path-integral estimate.
struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    /// Paths whose weight was set to exactly zero (killing or exclusion).
    std::size_t n_excluded = 0;
};

/// Fundamental solution of du/dt = Laplacian(u): (4 pi tau)^(-1/2) exp(-(x-y)^2 / (4 tau)).
double heat_kernel(double y, double x, double tau);

/// Kernel of exp(-tau (-Laplacian + x^2 - 1)) (Mehler form, ground energy
/// renormalized to zero).
double harmonic_kernel(double y, double x, double tau);

/// Tabulates a closed-form kernel fn(y, x, t - s) on the grid.
template <typename Fn>
KernelMatrix tabulate_kernel(const Grid& grid, double s, double t, Fn&& fn) {
    const std::size_t n = grid.size();
    std::vector<double> e(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) e[i * n + j] = fn(grid.node(i), grid.node(j), t - s);
    return KernelMatrix(grid, s, t, std::move(e));
}

KernelMatrix heat_kernel_matrix(const Grid& grid, double s, double t);
KernelMatrix harmonic_kernel_matrix(const Grid& grid, double s, double t);

/// Step count that keeps dt * max|c| <= 0.5 and dt <= h^2 (so the explicit
/// half of each Crank-Nicolson step stays nonnegative).
std::size_t suggested_steps(const PotentialSpec& spec, const Grid& grid, double s, double t);

/// Propagates u from s to t under du/dt = Laplacian(u) - c u.
///
/// Crank-Nicolson diffusion with the potential applied as exp(-c dt/2) half
/// steps on both sides (Strang splitting, c at the step midpoint). Homogeneous
/// Dirichlet values sit one spacing beyond each grid end. A +inf potential at
/// an end node acts as an absorbing wall; anywhere else it is rejected.
std::vector<double> propagate_forward(const PotentialSpec& spec, const Grid& grid,
                                      std::span<const double> u_s, double s, double t,
                                      std::size_t n_steps);

/// Propagates v from t back to s under dv/dt = -Laplacian(v) + c v. Uses the
/// transposed step sequence of propagate_forward, so the discrete pairing
/// sum_i w_i u_i v_i is conserved exactly between the two routes.
std::vector<double> propagate_backward(const PotentialSpec& spec, const Grid& grid,
                                       std::span<const double> v_t, double s, double t,
                                       std::size_t n_steps);

/// Kernel k(y_i, s, x_j, t) from propagating the unit-mass discrete delta at
/// each node i (value 1/w_i). Negative entries are clamped to zero and the
/// clamped magnitude is recorded. Throws SingularPotentialError for interior
/// singularities and std::invalid_argument when dt * max|c| > 0.5.
KernelMatrix assemble_kernel_pde(const PotentialSpec& spec, const Grid& grid, double s, double t,
                                 std::size_t n_steps);

/// All kernels K(times[0], times[k]) and K(times[k], times.back()) obtained
/// with `steps_per_interval` equal steps between consecutive times.
/// Equivalent to calling assemble_kernel_pde per pair with aligned step
/// sizes, but costs two sweeps instead of 2m.
struct KernelSweep {
    std::vector<double> times;
    std::vector<KernelMatrix> from_start;  // index k-1 holds K(times[0], times[k])
    std::vector<KernelMatrix> to_end;      // index k holds K(times[k], times.back())
};
KernelSweep assemble_kernel_sweep(const PotentialSpec& spec, const Grid& grid,
                                  std::span<const double> times, std::size_t steps_per_interval);

/// Grid with `pad` extra nodes of the same spacing on each side.
Grid padded_grid(const Grid& grid, std::size_t pad);
Grid padded_grid(const Grid& grid, std::size_t left, std::size_t right);

/// Padding (nodes per side) that moves the Dirichlet wall 4 sqrt(t - s) away
/// from the grid ends; the wall then perturbs end values by about e^{-16}.
std::size_t default_padding(const Grid& grid, double s, double t);

/// Entries of k on the nodes of `sub`, a contiguous run of k's grid nodes.
KernelMatrix restrict_kernel(const KernelMatrix& k, const Grid& sub);
KernelSweep restrict_sweep(const KernelSweep& sweep, const Grid& sub);

/// Kernel sweep assembled on `grid` padded by default_padding nodes on the
/// chosen sides and restricted back to `grid`. Leave a side unpadded when the
/// grid end sits next to a density node or singular point, whose Dirichlet
/// value belongs there. Steps follow suggested_steps on the padded grid.
KernelSweep assemble_padded_sweep(const PotentialSpec& spec, const Grid& grid,
                                  std::span<const double> times, bool pad_left = true,
                                  bool pad_right = true);

enum class McScheme {
    /// Brownian bridges pinned at both ends; estimate = heat kernel x mean weight.
    PinnedBridge,
    /// Free paths from y; the last increment is integrated analytically
    /// (heat-kernel density of landing on x). Nonzero variance even for c = 0.
    ForwardLastStep,
};

struct McOptions {
    std::size_t n_paths = 100000;
    std::size_t n_time = 100;
    std::uint64_t seed = 0;
    /// Paths leaving [first, second] are killed (first-exit restriction).
    std::optional<std::pair<double, double>> domain;
    McScheme scheme = McScheme::PinnedBridge;
};

/// Monte Carlo estimate of k(y, s, x, t) = E[exp(-int c) ; path stays admissible].
///
/// Paths use increments of variance 2 dtau (generator Laplacian). The time
/// integral of c is a trapezoid sum over sampled points. A path gets weight 0
/// when a sampled point leaves the domain, when c = +inf at a sampled point,
/// when it changes side of a static singular point (Wiener exclusion), or
/// when the integral exceeds ln(1e300). Between samples, the Brownian-bridge
/// probability of touching a barrier or singular point multiplies the weight.
/// Path i draws from its own stream derived from (seed, i) and the mean is a
/// pairwise sum in path order, so results do not depend on worker count.
McEstimate mc_kernel_estimate(const PotentialSpec& spec, double y, double x, double s, double t,
                              const McOptions& options);

McEstimate mc_kernel_estimate(const PotentialSpec& spec, double y, double x, double s, double t,
                              std::size_t n_paths, std::size_t n_time, std::uint64_t seed,
                              std::optional<std::pair<double, double>> domain = std::nullopt);

/// sup over (i, j) of |sum_k K_st(i,k) w_k K_tu(k,j) - K_su(i,j)|, restricted
/// to nodes inside `window` when given.
double chapman_kolmogorov_residual(const KernelMatrix& k_st, const KernelMatrix& k_tu,
                                   const KernelMatrix& k_su,
                                   std::optional<std::pair<double, double>> window = std::nullopt);

/// FKK1 binary: "FKK1", x_min, x_max (f64), grid n (u64), s, t (f64), n (u64),
/// then n*n row-major f64. Everything little-endian.
void write_kernel_binary(std::ostream& out, const KernelMatrix& k);
void write_kernel_binary(const std::string& path, const KernelMatrix& k);
KernelMatrix read_kernel_binary(std::istream& in);
KernelMatrix read_kernel_binary(const std::string& path);

/// Long-format CSV `y,x,k` for small grids.
void write_kernel_csv(std::ostream& out, const KernelMatrix& k);

}  // namespace fkbridge
