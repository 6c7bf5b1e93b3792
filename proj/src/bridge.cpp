#include "fkbridge/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fkbridge/errors.hpp"
#include "fkbridge/potentials.hpp"

namespace fkbridge {

namespace {

bool same_time(double a, double b) {
    return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
}

// Rejects negative values and interior zeros, raises tiny values to
// floor * peak and renormalizes.
Profile prepare_marginal(const Profile& p, double floor, const char* label,
                         std::vector<std::string>& warnings) {
    double peak = 0.0;
    for (double v : p.values) {
        if (v < 0.0) throw std::invalid_argument(std::string(label) + ": negative density value");
        peak = std::max(peak, v);
    }
    if (!(peak > 0.0)) throw std::invalid_argument(std::string(label) + ": density is identically zero");
    const double mass = integrate(p);
    if (std::abs(mass - 1.0) > 1e-6) {
        std::ostringstream msg;
        msg << label << ": density must be normalized (integral " << mass << ")";
        throw std::invalid_argument(msg.str());
    }
    const double cut = floor * peak;
    const std::size_t n = p.size();
    std::size_t first = n, last = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (p[i] > cut) {
            first = std::min(first, i);
            last = i;
        }
    for (std::size_t i = first; i <= last; ++i)
        if (p[i] <= cut) {
            std::ostringstream msg;
            msg << label << ": density vanishes at interior point x=" << p.grid.node(i)
                << "; nodal data must be split into components at the node";
            throw NodalDataError(msg.str());
        }
    std::vector<double> v(p.values);
    std::size_t raised = 0;
    for (double& x : v)
        if (x < cut) {
            x = cut;
            ++raised;
        }
    if (raised > 0) {
        std::ostringstream msg;
        msg << label << ": " << raised << " values raised to the positivity floor " << cut;
        warnings.push_back(msg.str());
    }
    return normalize(Profile(p.grid, std::move(v), p.time));
}

std::vector<double> checked_ratio(const std::vector<double>& num, const std::vector<double>& den,
                                  const char* what) {
    std::vector<double> out(num.size());
    for (std::size_t i = 0; i < num.size(); ++i) {
        if (!(den[i] > 0.0) || !std::isfinite(den[i])) {
            std::ostringstream msg;
            msg << "bridge solver: " << what << " has a zero or non-finite denominator at node " << i
                << "; kernel and marginals are incompatible";
            throw IncompatibleDataError(msg.str());
        }
        out[i] = num[i] / den[i];
    }
    return out;
}

double weighted_l1(const Grid& grid, const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += grid.weight(i) * std::abs(a[i] - b[i]);
    return s;
}

void fill_slices(const BridgeProblem& prob, BridgeSolution& sol) {
    const std::size_t m = prob.times.size();
    sol.times = prob.times;
    sol.theta.clear();
    sol.theta_star.clear();
    sol.rho.clear();
    sol.drift.clear();
    for (std::size_t k = 0; k < m; ++k) {
        const KernelMatrix* a = prob.from_start[k] ? &*prob.from_start[k] : nullptr;
        const KernelMatrix* b = prob.to_end[k] ? &*prob.to_end[k] : nullptr;
        auto [th, ths] = propagate_theta(sol.f, sol.g, prob.times[k], a, b);
        std::vector<double> r(th.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = th[i] * ths[i];
        sol.rho.emplace_back(th.grid, std::move(r), prob.times[k]);
        sol.drift.push_back(drift_field(th));
        sol.theta.push_back(std::move(th));
        sol.theta_star.push_back(std::move(ths));
    }
}

}  // namespace

BridgeProblem make_bridge_problem(Profile rho0, Profile rhoT, KernelMatrix kernel_0T) {
    const double s = kernel_0T.s, t = kernel_0T.t;
    BridgeProblem p{std::move(rho0), std::move(rhoT), kernel_0T, {s, t}, {}, {}};
    p.from_start = {std::nullopt, kernel_0T};
    p.to_end = {std::move(kernel_0T), std::nullopt};
    return p;
}

BridgeProblem make_bridge_problem(Profile rho0, Profile rhoT, KernelSweep sweep) {
    const std::size_t m = sweep.times.size();
    if (m < 2 || sweep.from_start.size() != m - 1 || sweep.to_end.size() != m - 1)
        throw std::invalid_argument("make_bridge_problem: incomplete kernel sweep");
    KernelMatrix k0T = sweep.from_start.back();
    BridgeProblem p{std::move(rho0), std::move(rhoT), std::move(k0T), sweep.times, {}, {}};
    p.from_start.emplace_back(std::nullopt);
    for (auto& k : sweep.from_start) p.from_start.emplace_back(std::move(k));
    for (auto& k : sweep.to_end) p.to_end.emplace_back(std::move(k));
    p.to_end.emplace_back(std::nullopt);
    return p;
}

double marginal_residual(const KernelMatrix& k, const Profile& rho0, const Profile& rhoT,
                         const Profile& f, const Profile& g) {
    const auto kg = k.apply(g.values);
    const auto kf = k.apply_transpose(f.values);
    std::vector<double> m0(kg.size()), mT(kf.size());
    for (std::size_t i = 0; i < m0.size(); ++i) {
        m0[i] = f[i] * kg[i];
        mT[i] = g[i] * kf[i];
    }
    return weighted_l1(k.grid, m0, rho0.values) + weighted_l1(k.grid, mT, rhoT.values);
}

BridgeSolution solve_schrodinger_system(const BridgeProblem& prob, const BridgeOptions& opt) {
    const KernelMatrix& K = prob.kernel_0T;
    const Grid& grid = K.grid;
    if (!(prob.rho0.grid == grid) || !(prob.rhoT.grid == grid))
        throw std::invalid_argument("bridge solver: marginals and kernel use different grids");
    if (!same_time(prob.rho0.time, K.s) || !same_time(prob.rhoT.time, K.t))
        throw std::invalid_argument("bridge solver: marginal times do not match the kernel interval");
    const std::size_t m = prob.times.size();
    if (m < 2 || prob.from_start.size() != m || prob.to_end.size() != m ||
        !same_time(prob.times.front(), K.s) || !same_time(prob.times.back(), K.t))
        throw std::invalid_argument("bridge solver: slice times inconsistent with the kernel");
    for (std::size_t k = 0; k < m; ++k) {
        if (k > 0 && !prob.from_start[k])
            throw std::invalid_argument("bridge solver: missing slice kernel K(0, t)");
        if (k + 1 < m && !prob.to_end[k])
            throw std::invalid_argument("bridge solver: missing slice kernel K(t, T)");
    }
    if (!(opt.tol > 0.0)) throw std::invalid_argument("bridge solver: tol must be > 0");
    if (opt.max_iter == 0) throw std::invalid_argument("bridge solver: max_iter must be >= 1");

    std::vector<std::string> warnings;
    const Profile rho0 = prepare_marginal(prob.rho0, opt.floor, "rho0", warnings);
    const Profile rhoT = prepare_marginal(prob.rhoT, opt.floor, "rhoT", warnings);

    const std::size_t n = grid.size();
    std::vector<double> f(n, 1.0), g(n, 1.0);
    std::vector<double> kg = K.apply(g);
    std::vector<double> history;
    double residual = INFINITY;
    std::size_t it = 0;
    while (it < opt.max_iter) {
        ++it;
        f = checked_ratio(rho0.values, kg, "K g");
        const auto kf = K.apply_transpose(f);
        g = checked_ratio(rhoT.values, kf, "K^T f");
        kg = K.apply(g);
        // after the g update the T-marginal holds to rounding; measure both anyway
        std::vector<double> m0(n), mT(n);
        for (std::size_t i = 0; i < n; ++i) {
            m0[i] = f[i] * kg[i];
            mT[i] = g[i] * kf[i];
        }
        residual = weighted_l1(grid, m0, rho0.values) + weighted_l1(grid, mT, rhoT.values);
        history.push_back(residual);
        if (!std::isfinite(residual)) throw IncompatibleDataError("bridge solver: residual is not finite");
        if (residual <= opt.tol) break;
    }

    // gauge: integrate(f) == integrate(g)
    const double lambda = std::sqrt(integrate(grid, g) / integrate(grid, f));
    for (double& v : f) v *= lambda;
    for (double& v : g) v /= lambda;

    auto sol = std::make_shared<BridgeSolution>(BridgeSolution{
        Profile(grid, std::move(f), K.s), Profile(grid, std::move(g), K.t), {}, {}, {}, {}, {},
        residual, it, std::move(history), 0.0, std::move(warnings)});
    sol->gauge = integrate(sol->f);
    fill_slices(prob, *sol);

    if (!(residual <= opt.tol)) {
        std::ostringstream msg;
        msg << "bridge solver did not converge: residual " << residual << " > tol " << opt.tol
            << " after " << it << " iterations";
        throw ConvergenceError(msg.str(), sol);
    }
    return std::move(*sol);
}

std::pair<Profile, Profile> propagate_theta(const Profile& f, const Profile& g, double time,
                                            const KernelMatrix* k_0t, const KernelMatrix* k_tT) {
    if (!(f.grid == g.grid)) throw std::invalid_argument("propagate_theta: f and g grids differ");
    auto theta = [&]() {
        if (!k_tT) {
            if (!same_time(time, g.time)) throw std::invalid_argument("propagate_theta: missing K(t, T)");
            return Profile(g.grid, g.values, time);
        }
        if (!same_time(k_tT->s, time) || !same_time(k_tT->t, g.time))
            throw std::invalid_argument("propagate_theta: K(t, T) spans the wrong interval");
        return Profile(g.grid, k_tT->apply(g.values), time);
    }();
    auto theta_star = [&]() {
        if (!k_0t) {
            if (!same_time(time, f.time)) throw std::invalid_argument("propagate_theta: missing K(0, t)");
            return Profile(f.grid, f.values, time);
        }
        if (!same_time(k_0t->s, f.time) || !same_time(k_0t->t, time))
            throw std::invalid_argument("propagate_theta: K(0, t) spans the wrong interval");
        return Profile(f.grid, k_0t->apply_transpose(f.values), time);
    }();
    return {std::move(theta), std::move(theta_star)};
}

Profile drift_field(const Profile& theta) {
    std::vector<double> lg(theta.size());
    for (std::size_t i = 0; i < lg.size(); ++i) {
        if (!(theta[i] > 0.0)) {
            std::ostringstream msg;
            msg << "drift_field: theta is not positive at x=" << theta.grid.node(i);
            throw IncompatibleDataError(msg.str());
        }
        lg[i] = std::log(theta[i]);
    }
    auto d = gradient(theta.grid, lg);
    for (double& v : d) v *= 2.0;
    return Profile(theta.grid, std::move(d), theta.time);
}

std::vector<double> joint_density(const KernelMatrix& k, const Profile& f, const Profile& g) {
    const std::size_t n = k.size();
    std::vector<double> m(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m[i * n + j] = f[i] * k(i, j) * g[j];
    return m;
}

TransitionDensity transition_density(const KernelMatrix& k, const Profile& theta_t,
                                     const Profile& theta_s, const TransitionOptions& opt) {
    if (!(theta_t.grid == k.grid) || !(theta_s.grid == k.grid))
        throw std::invalid_argument("transition_density: grids differ");
    const std::size_t n = k.size();
    for (std::size_t i = 0; i < n; ++i)
        if (!(theta_s[i] > 0.0) || !(theta_t[i] >= 0.0))
            throw IncompatibleDataError("transition_density: theta must be strictly positive");
    TransitionDensity p{k.grid, k.s, k.t, std::vector<double>(n * n), 0.0};
    const auto w = k.grid.weights();
    for (std::size_t i = 0; i < n; ++i) {
        double* row = p.entries.data() + i * n;
        const double inv = 1.0 / theta_s[i];
        double mass = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = k(i, j) * theta_t[j] * inv;
            mass += w[j] * row[j];
        }
        const double y = k.grid.node(i);
        if (opt.check_window && (y < opt.check_window->first || y > opt.check_window->second)) continue;
        const double dev = std::abs(mass - 1.0);
        p.max_row_deviation = std::max(p.max_row_deviation, dev);
        if (dev > opt.row_tol) {
            std::ostringstream msg;
            msg << "transition_density: row at y=" << y << " integrates to " << mass
                << "; theta and kernel are inconsistent";
            throw IncompatibleDataError(msg.str());
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= mass;
    }
    return p;
}

Profile TransitionDensity::propagate(const Profile& rho_s) const {
    if (!(rho_s.grid == grid)) throw std::invalid_argument("TransitionDensity::propagate: grids differ");
    const std::size_t n = size();
    const auto w = grid.weights();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = w[i] * rho_s[i];
        if (a == 0.0) continue;
        const double* row = entries.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += a * row[j];
    }
    return Profile(grid, std::move(out), t);
}

TransitionDensity compose(const TransitionDensity& a, const TransitionDensity& b) {
    if (!(a.grid == b.grid)) throw std::invalid_argument("compose: grids differ");
    if (!same_time(a.t, b.s)) throw std::invalid_argument("compose: time intervals do not chain");
    const std::size_t n = a.size();
    const auto w = a.grid.weights();
    TransitionDensity p{a.grid, a.s, b.t, std::vector<double>(n * n, 0.0), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
        double* out = p.entries.data() + i * n;
        for (std::size_t k = 0; k < n; ++k) {
            const double c = a(i, k) * w[k];
            if (c == 0.0) continue;
            const double* rb = b.entries.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += c * rb[j];
        }
    }
    return p;
}

void write_solution_slices(const BridgeSolution& sol, const std::string& dir) {
    std::filesystem::create_directories(dir);
    char name[32], buf[160];
    for (std::size_t k = 0; k < sol.times.size(); ++k) {
        std::snprintf(name, sizeof name, "slice_%03zu.csv", k);
        const auto path = (std::filesystem::path(dir) / name).string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open " + path + " for writing");
        std::snprintf(buf, sizeof buf, "# time=%.17g\n", sol.times[k]);
        out << buf << "x,theta,theta_star,rho,drift\n";
        const Grid& g = sol.theta[k].grid;
        for (std::size_t i = 0; i < g.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", g.node(i),
                          sol.theta[k][i], sol.theta_star[k][i], sol.rho[k][i], sol.drift[k][i]);
            out << buf;
        }
    }
}

StoredSlices read_solution_slices(const std::string& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("slice_", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
    }
    if (files.size() < 2) throw std::runtime_error("no slice_*.csv files (need >= 2) in " + dir);
    std::sort(files.begin(), files.end());
    StoredSlices out;
    for (const auto& path : files) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        double time = 0.0;
        std::vector<double> xs, rho, drift;
        std::string line;
        bool header = false;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (line[0] == '#') {
                const auto pos = line.find("time=");
                if (pos != std::string::npos) time = std::stod(line.substr(pos + 5));
                continue;
            }
            if (!header) {
                header = true;
                continue;
            }
            double v[5];
            if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3], &v[4]) != 5)
                throw std::runtime_error("malformed slice row in " + path.string());
            xs.push_back(v[0]);
            rho.push_back(v[3]);
            drift.push_back(v[4]);
        }
        if (xs.size() < 3) throw std::runtime_error("slice file too short: " + path.string());
        Grid g(xs.front(), xs.back(), xs.size());
        out.times.push_back(time);
        out.rho.emplace_back(g, std::move(rho), time);
        out.drift.emplace_back(g, std::move(drift), time);
    }
    for (std::size_t k = 1; k < out.times.size(); ++k)
        if (!(out.times[k] > out.times[k - 1]))
            throw std::runtime_error("slice times are not increasing in " + dir);
    return out;
}

}  // namespace fkbridge
