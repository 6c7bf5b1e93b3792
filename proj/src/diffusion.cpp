#include "fkbridge/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <tuple>

#include "fkbridge/kernel.hpp"
#include "fkbridge/parallel.hpp"
#include "fkbridge/rng.hpp"
#include "binary_io.hpp"

namespace fkbridge {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SliceTable {
    std::vector<double> times;
    std::vector<Profile> slices;

    double operator()(double x, double t) const {
        if (slices.size() == 1 || t <= times.front()) return slices.front().interpolate(x);
        if (t >= times.back()) return slices.back().interpolate(x);
        const auto hi = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
        const std::size_t lo = hi - 1;
        const double u = (t - times[lo]) / (times[hi] - times[lo]);
        return (1.0 - u) * slices[lo].interpolate(x) + u * slices[hi].interpolate(x);
    }
};

// Inverse of the trapezoid CDF of a nonnegative profile, density linear per cell.
class CdfSampler {
public:
    explicit CdfSampler(const Profile& rho) : rho_(rho), cdf_(rho.size(), 0.0) {
        const double h = rho.grid.spacing();
        for (std::size_t i = 1; i < rho.size(); ++i) cdf_[i] = cdf_[i - 1] + 0.5 * h * (rho[i - 1] + rho[i]);
    }

    double operator()(double u) const {
        const double target = u * cdf_.back();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
        std::size_t i = it == cdf_.begin() ? 0 : static_cast<std::size_t>(it - cdf_.begin()) - 1;
        i = std::min(i, rho_.size() - 2);
        const double h = rho_.grid.spacing();
        const double a = rho_[i], b = rho_[i + 1];
        const double r = std::max(0.0, target - cdf_[i]);
        // solve a v + (b - a) v^2 / (2h) = r for v in [0, h]
        const double disc = a * a + 2.0 * (b - a) * r / h;
        const double den = a + std::sqrt(std::max(0.0, disc));
        const double v = den > 0.0 ? 2.0 * r / den : 0.0;
        return rho_.grid.node(i) + std::clamp(v, 0.0, h);
    }

private:
    const Profile& rho_;
    std::vector<double> cdf_;
};

struct PathState {
    double x;
    bool absorbed = false;
    bool flagged = false;
};

class Stepper {
public:
    Stepper(const DriftField& drift, const SimulationOptions& opt, double guard)
        : drift_(drift), opt_(opt), guard_(guard) {}

    // Advances by dt; false once the path leaves the domain.
    bool step(PathState& st, double t, double dt, std::size_t depth, std::mt19937_64& rng,
              std::normal_distribution<double>& normal) const {
        const double xp = st.x + drift_(st.x, t) * dt + std::sqrt(2.0 * dt) * normal(rng);
        if (!admissible(st.x, xp)) {
            if (depth < opt_.max_halvings) {
                const double half = 0.5 * dt;
                return step(st, t, half, depth + 1, rng, normal) &&
                       step(st, t + half, half, depth + 1, rng, normal);
            }
            st.flagged = true;
            return true;
        }
        if (!std::isfinite(xp) || xp <= opt_.domain.first || xp >= opt_.domain.second) {
            st.absorbed = true;
            return false;
        }
        st.x = xp;
        return true;
    }

private:
    // Never cross a node; never enter its guard band from outside.
    bool admissible(double x, double xp) const {
        for (double z : opt_.nodes) {
            if ((x - z) * (xp - z) <= 0.0) return false;
            if (std::abs(xp - z) < guard_ && std::abs(x - z) >= guard_) return false;
        }
        return true;
    }

    const DriftField& drift_;
    const SimulationOptions& opt_;
    double guard_;
};

double sample_mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = (v[i] - mean) * (v[i] - mean);
    return pairwise_sum(d.data(), d.size()) / static_cast<double>(v.size() - 1);
}

// Intercept of the least-squares line through (x_k, y_k) as sum_k c_k y_k.
std::vector<double> intercept_weights(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double xbar = 0.0;
    for (double v : x) xbar += v;
    xbar /= n;
    double sxx = 0.0;
    for (double v : x) sxx += (v - xbar) * (v - xbar);
    std::vector<double> c(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) c[k] = 1.0 / n - xbar * (x[k] - xbar) / sxx;
    return c;
}

// Intercept and its standard error from the fit residuals.
std::pair<double, double> fit_intercept(const std::vector<double>& x, const std::vector<double>& y) {
    const auto c = intercept_weights(x);
    const double n = static_cast<double>(x.size());
    double a = 0.0, xbar = 0.0, ybar = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        a += c[k] * y[k];
        xbar += x[k] / n;
        ybar += y[k] / n;
    }
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxx += (x[k] - xbar) * (x[k] - xbar);
        sxy += (x[k] - xbar) * (y[k] - ybar);
    }
    const double slope = sxy / sxx;
    double rss = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double r = y[k] - (a + slope * x[k]);
        rss += r * r;
    }
    const double s2 = x.size() > 2 ? rss / (n - 2.0) : 0.0;
    return {a, std::sqrt(s2 * (1.0 / n + xbar * xbar / sxx))};
}

void check_increments(const std::vector<double>& taus) {
    if (taus.size() < 3) throw std::invalid_argument("estimate_moments: need at least three time increments");
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (!(taus[i] > 0.0)) throw std::invalid_argument("estimate_moments: increments must be positive");
        for (std::size_t j = 0; j < i; ++j)
            if (taus[i] == taus[j]) throw std::invalid_argument("estimate_moments: increments must be distinct");
    }
}

void fill_fits(MomentEstimates& m) {
    std::tie(m.escape_rate, m.escape_rate_se) = fit_intercept(m.increments, m.escape_by_increment);
    std::tie(m.drift_hat, m.drift_hat_se) = fit_intercept(m.increments, m.drift_by_increment);
    std::tie(m.diffusion_hat, m.diffusion_hat_se) = fit_intercept(m.increments, m.diffusion_by_increment);
}

constexpr char kMagic[4] = {'F', 'K', 'E', '1'};

}  // namespace

DriftField::DriftField(std::vector<Profile> slices) {
    if (slices.empty()) throw std::invalid_argument("DriftField: no slices");
    SliceTable table;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        if (!(slices[k].grid == slices.front().grid))
            throw std::invalid_argument("DriftField: slices must share a grid");
        if (k > 0 && !(slices[k].time > slices[k - 1].time))
            throw std::invalid_argument("DriftField: slice times must increase");
        table.times.push_back(slices[k].time);
    }
    table.slices = std::move(slices);
    fn_ = [table = std::move(table)](double x, double t) { return table(x, t); };
}

DriftField::DriftField(std::function<double(double, double)> fn) : fn_(std::move(fn)) {
    if (!fn_) throw std::invalid_argument("DriftField: empty function");
}

PathEnsemble simulate_paths(const DriftField& drift, const Profile& rho0, const SimulationOptions& opt) {
    const double span = opt.record.t1() - opt.record.t0();
    if (!(opt.dt > 0.0) || !std::isfinite(opt.dt)) throw std::invalid_argument("simulate_paths: dt must be positive");
    if (opt.dt > span / 100.0) throw std::invalid_argument("simulate_paths: dt must be at most (t1 - t0) / 100");
    if (opt.n_paths == 0) throw std::invalid_argument("simulate_paths: need at least one path");
    if (!(opt.domain.first < opt.domain.second)) throw std::invalid_argument("simulate_paths: empty domain");
    if (!opt.start_point) {
        for (double v : rho0.values)
            if (v < 0.0) throw std::invalid_argument("simulate_paths: rho0 has negative values");
        if (std::abs(integrate(rho0) - 1.0) > 1e-6) throw std::invalid_argument("simulate_paths: rho0 is not normalized");
    }
    const double guard = opt.guard > 0.0 ? opt.guard : 2.0 * rho0.grid.spacing();

    PathEnsemble ens;
    ens.n_paths = opt.n_paths;
    ens.times = opt.record;
    ens.seed = opt.seed;
    const std::size_t m = opt.record.size();
    ens.positions.assign(opt.n_paths * m, kNaN);
    std::vector<unsigned char> flagged(opt.n_paths, 0);
    std::vector<std::size_t> absorbed_at(opt.n_paths, m);

    const CdfSampler sampler(rho0);
    const Stepper stepper(drift, opt, guard);
    std::vector<std::size_t> substeps(m - 1);
    for (std::size_t k = 0; k + 1 < m; ++k) {
        const double len = opt.record.time(k + 1) - opt.record.time(k);
        substeps[k] = static_cast<std::size_t>(std::ceil(len / opt.dt * (1.0 - 1e-12)));
    }

    parallel_for(opt.n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            auto rng = path_stream(opt.seed, p);
            std::uniform_real_distribution<double> uniform(0.0, 1.0);
            std::normal_distribution<double> normal(0.0, 1.0);
            PathState st{opt.start_point ? *opt.start_point : sampler(uniform(rng))};
            double* row = ens.positions.data() + p * m;
            row[0] = st.x;
            for (std::size_t k = 0; k + 1 < m && !st.absorbed; ++k) {
                const double t0 = opt.record.time(k);
                const double len = opt.record.time(k + 1) - t0;
                const double h = len / static_cast<double>(substeps[k]);
                for (std::size_t j = 0; j < substeps[k]; ++j) {
                    if (!stepper.step(st, t0 + static_cast<double>(j) * h, h, 0, rng, normal)) break;
                }
                if (st.absorbed) {
                    absorbed_at[p] = k + 1;
                } else {
                    row[k + 1] = st.x;
                }
            }
            flagged[p] = st.flagged ? 1 : 0;
        }
    });

    ens.absorbed_by_slice.assign(m, 0);
    for (std::size_t p = 0; p < opt.n_paths; ++p) {
        if (absorbed_at[p] < m) {
            ++ens.n_absorbed;
            for (std::size_t k = absorbed_at[p]; k < m; ++k) ++ens.absorbed_by_slice[k];
        }
        ens.n_flagged += flagged[p];
    }
    return ens;
}

Profile empirical_density(const PathEnsemble& ens, double t, const Grid& grid, double bandwidth) {
    const std::size_t k = ens.times.index_of(t);
    if (k == TimeGrid::npos) throw std::invalid_argument("empirical_density: t is not a record time");
    std::vector<double> xs;
    xs.reserve(ens.n_paths);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const double x = ens.at(p, k);
        if (std::isfinite(x)) xs.push_back(x);
    }
    if (xs.empty()) throw std::invalid_argument("empirical_density: no surviving paths");
    const double h = grid.spacing();

    double bw = bandwidth;
    if (!(bw > 0.0)) {
        const double mean = sample_mean(xs);
        const double sd = std::sqrt(sample_var(xs, mean));
        std::vector<double> sorted = xs;
        std::sort(sorted.begin(), sorted.end());
        auto quantile = [&](double q) {
            const double pos = q * static_cast<double>(sorted.size() - 1);
            const auto lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
            return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
        };
        const double iqr = (quantile(0.75) - quantile(0.25)) / 1.34;
        double spread = sd;
        if (iqr > 0.0) spread = std::min(sd, iqr);
        bw = 0.9 * spread * std::pow(static_cast<double>(xs.size()), -0.2);
    }
    bw = std::max(bw, h);

    const std::size_t n = grid.size();
    std::vector<double> counts(n, 0.0);
    for (double x : xs) {
        if (x < grid.x_min() || x > grid.x_max()) continue;
        const std::size_t i = grid.cell_of(x);
        const double u = std::clamp((x - grid.node(i)) / h, 0.0, 1.0);
        counts[i] += 1.0 - u;
        counts[i + 1] += u;
    }

    const auto reach = static_cast<std::size_t>(std::ceil(8.0 * bw / h));
    std::vector<double> kern(reach + 1);
    for (std::size_t d = 0; d <= reach; ++d) {
        const double z = static_cast<double>(d) * h / bw;
        kern[d] = std::exp(-0.5 * z * z);
    }
    std::vector<double> dens(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (counts[i] == 0.0) continue;
        const std::size_t lo = i > reach ? i - reach : 0;
        const std::size_t hi = std::min(n - 1, i + reach);
        for (std::size_t j = lo; j <= hi; ++j) dens[j] += counts[i] * kern[i > j ? i - j : j - i];
    }
    Profile out(grid, std::move(dens), ens.times.time(k));
    if (!(integrate(out) > 0.0)) throw std::invalid_argument("empirical_density: no samples inside the grid");
    return normalize(out);
}

std::vector<SliceStats> slice_statistics(const PathEnsemble& ens) {
    std::vector<SliceStats> out;
    const std::size_t m = ens.times.size();
    std::vector<double> xs;
    for (std::size_t k = 0; k < m; ++k) {
        xs.clear();
        for (std::size_t p = 0; p < ens.n_paths; ++p) {
            const double x = ens.at(p, k);
            if (std::isfinite(x)) xs.push_back(x);
        }
        SliceStats s;
        s.t = ens.times.time(k);
        s.n_alive = xs.size();
        s.n_absorbed = ens.n_paths - xs.size();
        s.mean = sample_mean(xs);
        s.var = sample_var(xs, s.mean);
        out.push_back(s);
    }
    return out;
}

MomentEstimates estimate_moments(std::span<const TransitionDensity> p, double x0, double s, double epsilon) {
    if (p.empty()) throw std::invalid_argument("estimate_moments: no transition densities");
    const Grid& grid = p.front().grid;
    if (epsilon < 3.0 * grid.spacing()) throw std::invalid_argument("estimate_moments: epsilon below 3 grid spacings");
    if (x0 < grid.x_min() || x0 > grid.x_max()) throw std::invalid_argument("estimate_moments: x0 outside the grid");
    MomentEstimates m;
    m.x0 = x0;
    m.s = s;
    m.epsilon = epsilon;
    for (const auto& d : p) {
        if (!(d.grid == grid)) throw std::invalid_argument("estimate_moments: densities must share a grid");
        if (std::abs(d.s - s) > 1e-12 * std::max(1.0, std::abs(s)))
            throw std::invalid_argument("estimate_moments: densities must start at s");
        m.increments.push_back(d.t - s);
    }
    check_increments(m.increments);

    const std::size_t i = grid.cell_of(x0);
    const double u = std::clamp((x0 - grid.node(i)) / grid.spacing(), 0.0, 1.0);
    for (const auto& d : p) {
        const double tau = d.t - s;
        double esc = 0.0, m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const double r = (1.0 - u) * d(i, j) + u * d(i + 1, j);
            const double dx = grid.node(j) - x0;
            const double w = grid.weight(j) * r;
            if (std::abs(dx) > epsilon) {
                esc += w;
            } else {
                m1 += w * dx;
                m2 += w * dx * dx;
            }
        }
        m.escape_by_increment.push_back(esc / tau);
        m.drift_by_increment.push_back(m1 / tau);
        m.diffusion_by_increment.push_back(m2 / tau);
    }
    fill_fits(m);
    return m;
}

MomentEstimates estimate_moments(const PathEnsemble& ens, double x0, double s, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("estimate_moments: epsilon must be positive");
    if (std::abs(ens.times.t0() - s) > 1e-12 * std::max(1.0, std::abs(s)))
        throw std::invalid_argument("estimate_moments: ensemble must start at s");
    for (std::size_t p = 0; p < ens.n_paths; ++p)
        if (ens.at(p, 0) != x0) throw std::invalid_argument("estimate_moments: ensemble must start at x0");
    MomentEstimates m;
    m.x0 = x0;
    m.s = s;
    m.epsilon = epsilon;
    for (std::size_t k = 1; k < ens.times.size(); ++k) m.increments.push_back(ens.times.time(k) - s);
    check_increments(m.increments);

    const double n = static_cast<double>(ens.n_paths);
    std::vector<double> se_esc, se_m1, se_m2;
    std::vector<double> a(ens.n_paths), b(ens.n_paths);
    for (std::size_t k = 1; k < ens.times.size(); ++k) {
        const double tau = m.increments[k - 1];
        std::size_t escaped = 0;
        for (std::size_t p = 0; p < ens.n_paths; ++p) {
            const double dx = ens.at(p, k) - x0;
            if (!std::isfinite(dx) || std::abs(dx) > epsilon) {
                ++escaped;
                a[p] = b[p] = 0.0;
            } else {
                a[p] = dx;
                b[p] = dx * dx;
            }
        }
        const double q = static_cast<double>(escaped) / n;
        const double ma = sample_mean(a), mb = sample_mean(b);
        m.escape_by_increment.push_back(q / tau);
        m.drift_by_increment.push_back(ma / tau);
        m.diffusion_by_increment.push_back(mb / tau);
        se_esc.push_back(std::sqrt(q * (1.0 - q) / n) / tau);
        se_m1.push_back(std::sqrt(sample_var(a, ma) / n) / tau);
        se_m2.push_back(std::sqrt(sample_var(b, mb) / n) / tau);
    }
    fill_fits(m);
    // slices are treated as independent samples
    const auto c = intercept_weights(m.increments);
    auto propagate = [&](const std::vector<double>& se) {
        double v = 0.0;
        for (std::size_t k = 0; k < c.size(); ++k) v += c[k] * c[k] * se[k] * se[k];
        return std::sqrt(v);
    };
    m.escape_rate_se = propagate(se_esc);
    m.drift_hat_se = propagate(se_m1);
    m.diffusion_hat_se = propagate(se_m2);
    return m;
}

std::vector<TransitionDensity> short_time_transitions(const PotentialSpec& spec, const Profile& g, double s,
                                                      std::span<const double> taus) {
    const Grid& grid = g.grid;
    const double T = g.time;
    std::vector<TransitionDensity> out;
    for (double tau : taus) {
        if (!(tau > 0.0) || !(s + tau < T)) throw std::invalid_argument("short_time_transitions: need 0 < tau < T - s");
        const double t = s + tau;
        auto theta_t = propagate_backward(spec, grid, g.values, t, T, suggested_steps(spec, grid, t, T));
        auto k = assemble_kernel_pde(spec, grid, s, t, suggested_steps(spec, grid, s, t));
        auto theta_s = k.apply(theta_t);
        TransitionOptions opt;
        const double margin = 10.0 * std::sqrt(2.0 * tau) + 2.0 * grid.spacing();
        opt.check_window = std::pair{grid.x_min() + margin, grid.x_max() - margin};
        out.push_back(transition_density(k, Profile(grid, std::move(theta_t), t),
                                         Profile(grid, std::move(theta_s), s), opt));
    }
    return out;
}

void write_ensemble_binary(std::ostream& out, const PathEnsemble& ens) {
    out.write(kMagic, 4);
    detail::put_u64(out, ens.n_paths);
    detail::put_u64(out, ens.times.size());
    detail::put_f64(out, ens.times.t0());
    detail::put_f64(out, ens.times.t1());
    detail::put_u64(out, ens.seed);
    detail::put_u64(out, ens.n_absorbed);
    detail::put_u64(out, ens.n_flagged);
    for (double v : ens.positions) detail::put_f32(out, static_cast<float>(v));
    if (!out) throw std::runtime_error("FKE1: write failed");
}

void write_ensemble_binary(const std::string& path, const PathEnsemble& ens) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    write_ensemble_binary(out, ens);
}

PathEnsemble read_ensemble_binary(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw std::runtime_error("FKE1: bad magic");
    const std::uint64_t n = detail::get_u64(in, "FKE1");
    const std::uint64_t m = detail::get_u64(in, "FKE1");
    const double t0 = detail::get_f64(in, "FKE1");
    const double t1 = detail::get_f64(in, "FKE1");
    if (m < 2 || m > (1u << 24) || n == 0 || n > (1ull << 32) || n * m > (1ull << 34))
        throw std::runtime_error("FKE1: implausible dimensions");
    PathEnsemble ens;
    ens.n_paths = n;
    ens.times = TimeGrid(t0, t1, m);
    ens.seed = detail::get_u64(in, "FKE1");
    ens.n_absorbed = detail::get_u64(in, "FKE1");
    ens.n_flagged = detail::get_u64(in, "FKE1");
    ens.positions.resize(n * m);
    for (auto& v : ens.positions) v = detail::get_f32(in, "FKE1");
    ens.absorbed_by_slice.assign(m, 0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < m; ++k)
            if (!std::isfinite(ens.at(p, k))) ++ens.absorbed_by_slice[k];
    return ens;
}

PathEnsemble read_ensemble_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_ensemble_binary(in);
}

void write_summary_csv(std::ostream& out, const PathEnsemble& ens) {
    out << "t,mean,var,n_absorbed\n" << std::setprecision(17);
    for (const auto& s : slice_statistics(ens)) out << s.t << ',' << s.mean << ',' << s.var << ',' << s.n_absorbed << '\n';
}

void write_summary_csv(const std::string& path, const PathEnsemble& ens) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    write_summary_csv(out, ens);
}

}  // namespace fkbridge
