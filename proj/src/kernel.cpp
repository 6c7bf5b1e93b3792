#include "fkbridge/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "fkbridge/errors.hpp"
#include "fkbridge/parallel.hpp"
#include "binary_io.hpp"

namespace fkbridge {

KernelMatrix::KernelMatrix(Grid g, double s_, double t_, std::vector<double> e)
    : grid(std::move(g)), s(s_), t(t_), entries(std::move(e)) {
    if (entries.size() != grid.size() * grid.size())
        throw std::invalid_argument("KernelMatrix: entry count must be n*n");
    if (!(t > s)) throw std::invalid_argument("KernelMatrix: need s < t");
}

std::vector<double> KernelMatrix::apply(std::span<const double> g) const {
    const std::size_t n = size();
    if (g.size() != n) throw std::invalid_argument("KernelMatrix::apply: size mismatch");
    const auto w = grid.weights();
    std::vector<double> wg(n), out(n);
    for (std::size_t j = 0; j < n; ++j) wg[j] = w[j] * g[j];
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = entries.data() + i * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += r[j] * wg[j];
        out[i] = acc;
    }
    return out;
}

std::vector<double> KernelMatrix::apply_transpose(std::span<const double> f) const {
    const std::size_t n = size();
    if (f.size() != n) throw std::invalid_argument("KernelMatrix::apply_transpose: size mismatch");
    const auto w = grid.weights();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = w[i] * f[i];
        if (a == 0.0) continue;
        const double* r = entries.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += a * r[j];
    }
    return out;
}

double KernelMatrix::min_entry() const noexcept {
    return entries.empty() ? 0.0 : *std::min_element(entries.begin(), entries.end());
}

double heat_kernel(double y, double x, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("heat_kernel: tau must be > 0");
    const double d = x - y;
    return std::exp(-d * d / (4.0 * tau)) / std::sqrt(4.0 * std::numbers::pi * tau);
}

double harmonic_kernel(double y, double x, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("harmonic_kernel: tau must be > 0");
    // -(x^2+y^2) coth(2tau)/2 + xy/sinh(2tau), rearranged to stay accurate as tau -> 0
    const double d = x - y;
    const double expo = -0.5 * (x * x + y * y) * std::tanh(tau) - d * d / (2.0 * std::sinh(2.0 * tau));
    return std::exp(expo) / std::sqrt(-std::numbers::pi * std::expm1(-4.0 * tau));
}

KernelMatrix heat_kernel_matrix(const Grid& grid, double s, double t) {
    return tabulate_kernel(grid, s, t, heat_kernel);
}

KernelMatrix harmonic_kernel_matrix(const Grid& grid, double s, double t) {
    return tabulate_kernel(grid, s, t, harmonic_kernel);
}

namespace {

constexpr double kStiffness = 0.5;

double max_abs_potential(const PotentialSpec& spec, const Grid& grid, double s, double t) {
    double m = 0.0;
    const int samples = spec.time_dependent() ? 17 : 1;
    for (int k = 0; k < samples; ++k) {
        const double tau = samples == 1 ? s : s + (t - s) * k / (samples - 1);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double c = spec(grid.node(i), tau);
            if (std::isfinite(c)) m = std::max(m, std::abs(c));
        }
    }
    return m;
}

// Tridiagonal Crank-Nicolson solve for (I - dt/2 L) u' = (I + dt/2 L) u with the
// 3-point Laplacian and zero ghost values; r = dt / (2 h^2). Works on B
// interleaved columns.
class CnStepper {
public:
    CnStepper(std::size_t n, double r) : n_(n), r_(r), cp_(n), inv_m_(n) {
        double prev = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double m = 1.0 + 2.0 * r + r * prev;
            inv_m_[i] = 1.0 / m;
            cp_[i] = -r / m;
            prev = cp_[i];
        }
    }

    void diffuse(double* u, double* d, std::size_t B) const {
        const double r = r_, a = 1.0 - 2.0 * r_;
        const std::size_t n = n_;
        {
            const double im = inv_m_[0];
            for (std::size_t b = 0; b < B; ++b) d[b] = (a * u[b] + r * u[B + b]) * im;
        }
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double im = inv_m_[i];
            const double* um = u + (i - 1) * B;
            const double* u0 = u + i * B;
            const double* up = u + (i + 1) * B;
            const double* dm = d + (i - 1) * B;
            double* d0 = d + i * B;
            for (std::size_t b = 0; b < B; ++b)
                d0[b] = (a * u0[b] + r * (um[b] + up[b]) + r * dm[b]) * im;
        }
        {
            const std::size_t i = n - 1;
            const double im = inv_m_[i];
            for (std::size_t b = 0; b < B; ++b)
                d[i * B + b] = (a * u[i * B + b] + r * u[(i - 1) * B + b] + r * d[(i - 1) * B + b]) * im;
        }
        for (std::size_t b = 0; b < B; ++b) u[(n - 1) * B + b] = d[(n - 1) * B + b];
        for (std::size_t i = n - 1; i-- > 0;) {
            const double c = cp_[i];
            double* u0 = u + i * B;
            const double* up = u + (i + 1) * B;
            const double* d0 = d + i * B;
            for (std::size_t b = 0; b < B; ++b) u0[b] = d0[b] - c * up[b];
        }
    }

private:
    std::size_t n_;
    double r_;
    std::vector<double> cp_;
    std::vector<double> inv_m_;
};

// Step schedule between consecutive times: per-step half-factors exp(-c dt/2)
// and one stepper per interval.
struct StepPlan {
    std::size_t n = 0;
    std::size_t per_interval = 0;
    std::size_t intervals = 0;
    bool static_factors = false;
    std::vector<double> factors;
    std::vector<CnStepper> steppers;

    std::size_t total_steps() const { return per_interval * intervals; }
    const double* factor(std::size_t step) const {
        return factors.data() + (static_factors ? step / per_interval : step) * n;
    }
    const CnStepper& stepper(std::size_t step) const { return steppers[step / per_interval]; }
};

void check_singular_geometry(const PotentialSpec& spec, const Grid& grid, double s, double t) {
    const auto& sing = spec.singular_set();
    if (sing.empty()) return;
    const auto st = spec.singular_time();
    if (st && (*st < s || *st > t)) return;
    for (double p : sing) {
        if (p > grid.x_min() && p < grid.x_max()) {
            std::ostringstream msg;
            msg << "potential '" << spec.name() << "' is singular at x=" << p
                << " inside the grid [" << grid.x_min() << ", " << grid.x_max() << "]";
            if (st) msg << " at t=" << *st;
            msg << "; split the domain at the singular point or use the Monte Carlo estimator";
            throw SingularPotentialError(msg.str());
        }
    }
}

StepPlan make_plan(const PotentialSpec& spec, const Grid& grid, std::span<const double> times,
                   std::size_t per_interval) {
    if (times.size() < 2) throw std::invalid_argument("kernel assembly: need at least two times");
    if (per_interval == 0) throw std::invalid_argument("kernel assembly: n_steps must be >= 1");
    for (std::size_t k = 0; k + 1 < times.size(); ++k)
        if (!(times[k + 1] > times[k]))
            throw std::invalid_argument("kernel assembly: times must increase strictly");
    const double s = times.front(), t = times.back();
    if (s < spec.window_begin() || t > spec.window_end())
        throw std::out_of_range("kernel assembly: [s, t] outside the potential's time window");
    check_singular_geometry(spec, grid, s, t);

    StepPlan plan;
    plan.n = grid.size();
    plan.per_interval = per_interval;
    plan.intervals = times.size() - 1;
    plan.static_factors = !spec.time_dependent();
    const double h = grid.spacing();
    const std::size_t n = plan.n;
    // static potentials need one factor row per interval (dt may differ)
    const std::size_t rows_per_interval = plan.static_factors ? 1 : per_interval;
    plan.factors.resize(plan.intervals * rows_per_interval * n);

    double worst = 0.0;
    for (std::size_t q = 0; q < plan.intervals; ++q) {
        const double dt = (times[q + 1] - times[q]) / static_cast<double>(per_interval);
        plan.steppers.emplace_back(n, 0.5 * dt / (h * h));
        for (std::size_t k = 0; k < rows_per_interval; ++k) {
            const double tau = times[q] + (static_cast<double>(k) + 0.5) * dt;
            double* f = plan.factors.data() + (q * rows_per_interval + k) * n;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = grid.node(i);
                const double c = spec(x, tau);
                if (std::isnan(c)) throw std::domain_error("potential evaluated to NaN");
                if (c == std::numeric_limits<double>::infinity()) {
                    if (i != 0 && i + 1 != n) {
                        std::ostringstream msg;
                        msg << "potential '" << spec.name() << "' is +inf at interior node x=" << x
                            << "; split the domain at the singular point or use the Monte Carlo "
                               "estimator";
                        throw SingularPotentialError(msg.str());
                    }
                    f[i] = 0.0;
                    continue;
                }
                worst = std::max(worst, std::abs(c) * dt);
                f[i] = std::exp(-0.5 * c * dt);
            }
        }
    }
    if (worst > kStiffness) {
        std::ostringstream msg;
        msg << "kernel assembly: dt*max|c| = " << worst << " exceeds " << kStiffness
            << "; use at least " << suggested_steps(spec, grid, s, t) << " total steps";
        throw std::invalid_argument(msg.str());
    }
    return plan;
}

// One Strang step (symmetric, so it is also its own transpose).
void strang_step(const StepPlan& plan, std::size_t step, double* u, double* d, std::size_t B) {
    const double* f = plan.factor(step);
    const std::size_t n = plan.n;
    for (std::size_t i = 0; i < n; ++i) {
        const double fi = f[i];
        double* ui = u + i * B;
        for (std::size_t b = 0; b < B; ++b) ui[b] *= fi;
    }
    plan.stepper(step).diffuse(u, d, B);
    for (std::size_t i = 0; i < n; ++i) {
        const double fi = f[i];
        double* ui = u + i * B;
        for (std::size_t b = 0; b < B; ++b) ui[b] *= fi;
    }
}

constexpr std::size_t kBlock = 8;

// Forward sweep: row i starts as the discrete delta 1/w_i at times[0];
// snapshot after interval q lands in out[q] (may be null to skip).
void sweep_forward(const StepPlan& plan, const Grid& grid, std::vector<std::vector<double>*> out) {
    const std::size_t n = plan.n;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
        std::vector<double> u(n * kBlock), d(n * kBlock);
        for (std::size_t blk = b0; blk < b1; ++blk) {
            const std::size_t i0 = blk * kBlock;
            const std::size_t B = std::min(kBlock, n - i0);
            std::fill(u.begin(), u.end(), 0.0);
            for (std::size_t b = 0; b < B; ++b) u[(i0 + b) * B + b] = 1.0 / grid.weight(i0 + b);
            for (std::size_t q = 0; q < plan.intervals; ++q) {
                for (std::size_t k = 0; k < plan.per_interval; ++k)
                    strang_step(plan, q * plan.per_interval + k, u.data(), d.data(), B);
                if (!out[q]) continue;
                auto& e = *out[q];
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < n; ++j) e[(i0 + b) * n + j] = u[j * B + b];
            }
        }
    });
}

// Backward sweep: column j starts as the unit vector at times.back(); after
// reverse interval q the state is row j of the step product, giving
// K(times[q], T)(i, j) = state_i / w_i.
void sweep_backward(const StepPlan& plan, const Grid& grid, std::vector<std::vector<double>*> out) {
    const std::size_t n = plan.n;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
        std::vector<double> u(n * kBlock), d(n * kBlock);
        for (std::size_t blk = b0; blk < b1; ++blk) {
            const std::size_t j0 = blk * kBlock;
            const std::size_t B = std::min(kBlock, n - j0);
            std::fill(u.begin(), u.end(), 0.0);
            for (std::size_t b = 0; b < B; ++b) u[(j0 + b) * B + b] = 1.0;
            for (std::size_t q = plan.intervals; q-- > 0;) {
                for (std::size_t k = plan.per_interval; k-- > 0;)
                    strang_step(plan, q * plan.per_interval + k, u.data(), d.data(), B);
                if (!out[q]) continue;
                auto& e = *out[q];
                for (std::size_t i = 0; i < n; ++i) {
                    const double iw = 1.0 / grid.weight(i);
                    for (std::size_t b = 0; b < B; ++b) e[i * n + j0 + b] = u[i * B + b] * iw;
                }
            }
        }
    });
}

double clamp_negative(std::vector<double>& e) {
    double worst = 0.0;
    for (double& v : e)
        if (v < 0.0) {
            worst = std::max(worst, -v);
            v = 0.0;
        }
    return worst;
}

}  // namespace

std::size_t suggested_steps(const PotentialSpec& spec, const Grid& grid, double s, double t) {
    if (!(t > s)) throw std::invalid_argument("suggested_steps: need s < t");
    const double h = grid.spacing();
    const double span = t - s;
    const double by_diffusion = std::ceil(span / (h * h) * (1.0 - 1e-12));
    const double by_potential = std::ceil(span * max_abs_potential(spec, grid, s, t) / kStiffness);
    return static_cast<std::size_t>(std::max({by_diffusion, by_potential, 1.0}));
}

std::vector<double> propagate_forward(const PotentialSpec& spec, const Grid& grid,
                                      std::span<const double> u_s, double s, double t,
                                      std::size_t n_steps) {
    if (u_s.size() != grid.size()) throw std::invalid_argument("propagate_forward: size mismatch");
    const double times[2] = {s, t};
    const auto plan = make_plan(spec, grid, times, n_steps);
    std::vector<double> u(u_s.begin(), u_s.end()), d(grid.size());
    for (std::size_t k = 0; k < plan.total_steps(); ++k) strang_step(plan, k, u.data(), d.data(), 1);
    return u;
}

std::vector<double> propagate_backward(const PotentialSpec& spec, const Grid& grid,
                                       std::span<const double> v_t, double s, double t,
                                       std::size_t n_steps) {
    if (v_t.size() != grid.size()) throw std::invalid_argument("propagate_backward: size mismatch");
    const double times[2] = {s, t};
    const auto plan = make_plan(spec, grid, times, n_steps);
    std::vector<double> v(grid.size()), d(grid.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = grid.weight(i) * v_t[i];
    for (std::size_t k = plan.total_steps(); k-- > 0;) strang_step(plan, k, v.data(), d.data(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] /= grid.weight(i);
    return v;
}

KernelMatrix assemble_kernel_pde(const PotentialSpec& spec, const Grid& grid, double s, double t,
                                 std::size_t n_steps) {
    const double times[2] = {s, t};
    const auto plan = make_plan(spec, grid, times, n_steps);
    std::vector<double> e(grid.size() * grid.size());
    sweep_forward(plan, grid, {&e});
    KernelMatrix k(grid, s, t, std::move(e));
    k.clamped = clamp_negative(k.entries);
    return k;
}

KernelSweep assemble_kernel_sweep(const PotentialSpec& spec, const Grid& grid,
                                  std::span<const double> times, std::size_t steps_per_interval) {
    const auto plan = make_plan(spec, grid, times, steps_per_interval);
    const std::size_t m = times.size();
    const std::size_t nn = grid.size() * grid.size();

    std::vector<std::vector<double>> fwd(m - 1, std::vector<double>(nn));
    std::vector<std::vector<double>*> fptr;
    for (auto& e : fwd) fptr.push_back(&e);
    sweep_forward(plan, grid, fptr);

    std::vector<std::vector<double>> bwd(m - 1, std::vector<double>(nn));
    std::vector<std::vector<double>*> bptr;
    for (auto& e : bwd) bptr.push_back(&e);
    sweep_backward(plan, grid, bptr);

    KernelSweep out;
    out.times.assign(times.begin(), times.end());
    for (std::size_t k = 1; k < m; ++k) {
        KernelMatrix km(grid, times[0], times[k], std::move(fwd[k - 1]));
        km.clamped = clamp_negative(km.entries);
        out.from_start.push_back(std::move(km));
    }
    for (std::size_t k = 0; k + 1 < m; ++k) {
        KernelMatrix km(grid, times[k], times[m - 1], std::move(bwd[k]));
        km.clamped = clamp_negative(km.entries);
        out.to_end.push_back(std::move(km));
    }
    return out;
}

Grid padded_grid(const Grid& grid, std::size_t pad) { return padded_grid(grid, pad, pad); }

Grid padded_grid(const Grid& grid, std::size_t left, std::size_t right) {
    const double h = grid.spacing();
    return Grid(grid.x_min() - static_cast<double>(left) * h, grid.x_max() + static_cast<double>(right) * h,
                grid.size() + left + right);
}

KernelSweep assemble_padded_sweep(const PotentialSpec& spec, const Grid& grid, std::span<const double> times,
                                  bool pad_left, bool pad_right) {
    if (times.size() < 2) throw std::invalid_argument("assemble_padded_sweep: need at least two times");
    const std::size_t pad = default_padding(grid, times.front(), times.back());
    const Grid wide = padded_grid(grid, pad_left ? pad : 0, pad_right ? pad : 0);
    const std::size_t intervals = times.size() - 1;
    const std::size_t total = suggested_steps(spec, wide, times.front(), times.back());
    const std::size_t per = (total + intervals - 1) / intervals;
    return restrict_sweep(assemble_kernel_sweep(spec, wide, times, per), grid);
}

std::size_t default_padding(const Grid& grid, double s, double t) {
    if (!(t > s)) throw std::invalid_argument("default_padding: need s < t");
    return static_cast<std::size_t>(std::ceil(4.0 * std::sqrt(t - s) / grid.spacing()));
}

KernelMatrix restrict_kernel(const KernelMatrix& k, const Grid& sub) {
    const Grid& g = k.grid;
    const double h = g.spacing();
    const double off = (sub.x_min() - g.x_min()) / h;
    const auto o = static_cast<std::size_t>(std::llround(off));
    if (std::abs(sub.spacing() - h) > 1e-9 * h || off < -1e-6 || std::abs(off - double(o)) > 1e-6 ||
        o + sub.size() > g.size())
        throw std::invalid_argument("restrict_kernel: sub-grid is not a run of kernel grid nodes");
    const std::size_t n = g.size(), m = sub.size();
    std::vector<double> e(m * m);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(k.entries.begin() + (o + i) * n + o, m, e.begin() + i * m);
    KernelMatrix r(sub, k.s, k.t, std::move(e));
    r.clamped = k.clamped;
    return r;
}

KernelSweep restrict_sweep(const KernelSweep& sweep, const Grid& sub) {
    KernelSweep out;
    out.times = sweep.times;
    for (const auto& k : sweep.from_start) out.from_start.push_back(restrict_kernel(k, sub));
    for (const auto& k : sweep.to_end) out.to_end.push_back(restrict_kernel(k, sub));
    return out;
}

double chapman_kolmogorov_residual(const KernelMatrix& k_st, const KernelMatrix& k_tu,
                                   const KernelMatrix& k_su,
                                   std::optional<std::pair<double, double>> window) {
    if (!(k_st.grid == k_tu.grid) || !(k_st.grid == k_su.grid))
        throw std::invalid_argument("chapman_kolmogorov_residual: grids differ");
    const auto close = [](double a, double b) {
        return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
    };
    if (!close(k_st.t, k_tu.s) || !close(k_st.s, k_su.s) || !close(k_tu.t, k_su.t))
        throw std::invalid_argument("chapman_kolmogorov_residual: time intervals do not chain");
    const Grid& g = k_st.grid;
    const std::size_t n = g.size();
    std::size_t lo = 0, hi = n;
    if (window) {
        while (lo < n && g.node(lo) < window->first) ++lo;
        while (hi > lo && g.node(hi - 1) > window->second) --hi;
    }
    if (lo >= hi) return 0.0;
    const auto w = g.weights();
    std::vector<double> row_max(hi - lo, 0.0);
    parallel_for(hi - lo, [&](std::size_t a, std::size_t b) {
        std::vector<double> acc(n);
        for (std::size_t r = a; r < b; ++r) {
            const std::size_t i = lo + r;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t k = 0; k < n; ++k) {
                const double c = k_st(i, k) * w[k];
                if (c == 0.0) continue;
                const double* tk = k_tu.entries.data() + k * n;
                for (std::size_t j = 0; j < n; ++j) acc[j] += c * tk[j];
            }
            double m = 0.0;
            for (std::size_t j = lo; j < hi; ++j) m = std::max(m, std::abs(acc[j] - k_su(i, j)));
            row_max[r] = m;
        }
    });
    return *std::max_element(row_max.begin(), row_max.end());
}

using detail::get_f64;
using detail::get_u64;
using detail::put_f64;
using detail::put_u64;

namespace {

constexpr char kMagic[4] = {'F', 'K', 'K', '1'};

}  // namespace

void write_kernel_binary(std::ostream& out, const KernelMatrix& k) {
    out.write(kMagic, 4);
    put_f64(out, k.grid.x_min());
    put_f64(out, k.grid.x_max());
    put_u64(out, k.grid.size());
    put_f64(out, k.s);
    put_f64(out, k.t);
    put_u64(out, k.size());
    for (double v : k.entries) put_f64(out, v);
    if (!out) throw std::runtime_error("FKK1: write failed");
}

void write_kernel_binary(const std::string& path, const KernelMatrix& k) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_kernel_binary(out, k);
}

KernelMatrix read_kernel_binary(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("FKK1: bad magic");
    const double x_min = get_f64(in, "FKK1");
    const double x_max = get_f64(in, "FKK1");
    const std::uint64_t gn = get_u64(in, "FKK1");
    const double s = get_f64(in, "FKK1");
    const double t = get_f64(in, "FKK1");
    const std::uint64_t n = get_u64(in, "FKK1");
    if (n != gn || n < 3 || n > (1u << 16)) throw std::runtime_error("FKK1: inconsistent size");
    std::vector<double> e(n * n);
    for (auto& v : e) v = get_f64(in, "FKK1");
    return KernelMatrix(Grid(x_min, x_max, n), s, t, std::move(e));
}

KernelMatrix read_kernel_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_kernel_binary(in);
}

void write_kernel_csv(std::ostream& out, const KernelMatrix& k) {
    char buf[96];
    out << "# s=" << k.s << " t=" << k.t << '\n' << "y,x,k\n";
    for (std::size_t i = 0; i < k.size(); ++i)
        for (std::size_t j = 0; j < k.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", k.grid.node(i), k.grid.node(j),
                          k(i, j));
            out << buf;
        }
}

}  // namespace fkbridge
