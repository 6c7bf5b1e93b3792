#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fkbridge/bridge.hpp"
#include "fkbridge/errors.hpp"
#include "oracles.hpp"

using namespace fkbridge;

namespace {

struct GaussRun {
    BridgeProblem prob;
    BridgeSolution sol;
};

std::size_t steps_per_interval(const PotentialSpec& spec, const Grid& g, double T, std::size_t intervals) {
    return (suggested_steps(spec, g, 0, T) + intervals - 1) / intervals;
}

GaussRun gaussian_run(std::size_t n, std::size_t slices) {
    auto g = make_uniform_grid(-8, 8, static_cast<long long>(n));
    auto spec = PotentialSpec::gaussian_case();
    const auto times = TimeGrid(0, 1, slices).times();
    auto wide = padded_grid(g, default_padding(g, 0, 1));
    auto sweep = restrict_sweep(
        assemble_kernel_sweep(spec, wide, times, steps_per_interval(spec, wide, 1, slices - 1)), g);
    auto rho0 = normalize(sample(g, [](double x) { return oracle::gauss_rho(x, 0); }, 0));
    auto rhoT = normalize(sample(g, [](double x) { return oracle::gauss_rho(x, 1); }, 1));
    auto prob = make_bridge_problem(rho0, rhoT, std::move(sweep));
    BridgeOptions opt;
    opt.tol = 1e-10;
    auto sol = solve_schrodinger_system(prob, opt);
    return {std::move(prob), std::move(sol)};
}

const GaussRun& gauss() {
    static const GaussRun run = gaussian_run(201, 5);
    return run;
}

double rel_l2_up_to_constant(const Profile& p, const auto& ref) {
    // best constant c minimizing ||p - c ref||
    double pr = 0, rr = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = ref(p.grid.node(i));
        pr += p.grid.weight(i) * p[i] * r;
        rr += p.grid.weight(i) * r * r;
    }
    const double c = pr / rr;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = c * ref(p.grid.node(i));
        num += p.grid.weight(i) * (p[i] - r) * (p[i] - r);
        den += p.grid.weight(i) * r * r;
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("static bridge with a near-identity kernel") {
    auto g = make_uniform_grid(-5, 5, 201);
    // kernel width 0.2 against a unit-width density; IPF slows down as tau -> 0
    auto k = heat_kernel_matrix(g, 0, 1e-2);
    auto rho = normalize(sample(g, [](double x) { return std::exp(-x * x); }, 0));
    Profile rhoT(g, rho.values, 1e-2);
    auto sol = solve_schrodinger_system(make_bridge_problem(rho, rhoT, k));
    CHECK(sol.marginal_residual <= 1e-10);
    for (std::size_t i = 0; i < g.size(); i += 10) {
        CHECK(sol.f[i] == doctest::Approx(sol.g[i]).epsilon(1e-8));
        if (std::abs(g.node(i)) <= 2) CHECK(sol.f[i] * sol.g[i] == doctest::Approx(rho[i]).epsilon(3e-2));
    }
    CHECK(integrate(sol.f) == doctest::Approx(integrate(sol.g)).epsilon(1e-14));
}

TEST_CASE("free kernel bridge matches an extended-precision fixed point") {
    auto g = make_uniform_grid(-3, 3, 21);
    auto k = heat_kernel_matrix(g, 0, 1);
    auto rho = normalize(sample(g, [](double x) { return std::exp(-x * x) / std::sqrt(std::numbers::pi); }, 0));
    Profile rhoT(g, rho.values, 1);
    BridgeOptions opt;
    opt.tol = 1e-13;
    auto sol = solve_schrodinger_system(make_bridge_problem(rho, rhoT, k), opt);

    // reference: plain iteration in long double, many sweeps
    const std::size_t n = g.size();
    std::vector<long double> f(n, 1), gg(n, 1);
    for (int it = 0; it < 5000; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            long double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += (long double)k(i, j) * g.weight(j) * gg[j];
            f[i] = rho[i] / s;
        }
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += (long double)k(i, j) * g.weight(i) * f[i];
            gg[j] = rho[j] / s;
        }
    }
    long double sf = 0, sg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sf += g.weight(i) * f[i];
        sg += g.weight(i) * gg[i];
    }
    const long double lam = std::sqrt(sg / sf);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(sol.f[i] == doctest::Approx(double(f[i] * lam)).epsilon(1e-9));
        CHECK(sol.g[i] == doctest::Approx(double(gg[i] / lam)).epsilon(1e-9));
    }
    // both marginals of m = f K g
    auto m = joint_density(k, sol.f, sol.g);
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0, col = 0;
        for (std::size_t j = 0; j < n; ++j) {
            row += g.weight(j) * m[i * n + j];
            col += g.weight(j) * m[j * n + i];
        }
        CHECK(std::abs(row - rho[i]) <= 1e-12);
        CHECK(std::abs(col - rho[i]) <= 1e-12);
    }
}

TEST_CASE("Gaussian bridge reproduces the spreading density and its factors") {
    const auto& r = gauss();
    CHECK(r.sol.marginal_residual <= 1e-10);
    REQUIRE(r.sol.times.size() == 5);
    auto ref = sample(r.sol.rho[2].grid, [](double x) { return oracle::gauss_rho(x, 0.5); }, 0.5);
    CHECK(l1_distance(r.sol.rho[2], ref) <= 1e-3);
    CHECK(r.sol.rho[2][100] == doctest::Approx(0.356825).epsilon(2e-3));
    CHECK(rel_l2_up_to_constant(r.sol.f, [](double x) { return oracle::gauss_f(x, 0); }) <= 1e-2);
    CHECK(rel_l2_up_to_constant(r.sol.g, [](double x) { return oracle::gauss_g(x, 1); }) <= 1e-2);
}

TEST_CASE("theta endpoints are the factors themselves") {
    const auto& r = gauss();
    CHECK(r.sol.theta.back().values == r.sol.g.values);
    CHECK(r.sol.theta_star.front().values == r.sol.f.values);
    CHECK_THROWS(propagate_theta(r.sol.f, r.sol.g, 0.5, nullptr, nullptr));
}

TEST_CASE("mass is conserved on every slice") {
    const auto& r = gauss();
    for (const auto& rho : r.sol.rho) CHECK(std::abs(integrate(rho) - 1) <= 1e-6);
}

TEST_CASE("residual history is non-increasing") {
    const auto& h = gauss().sol.residual_history;
    REQUIRE(h.size() >= 2);
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1] * (1 + 1e-12));
}

TEST_CASE("Gaussian drift field") {
    const auto& r = gauss();
    const auto& b0 = r.sol.drift.front();
    CHECK(b0.interpolate(1.0) == doctest::Approx(-1.0).epsilon(1e-2));
    const auto& bT = r.sol.drift.back();
    for (std::size_t i = 50; i <= 150; i += 10) CHECK(std::abs(bT[i]) <= 1e-2);
}

TEST_CASE("transition density propagates the Gaussian marginal") {
    const auto& r = gauss();
    auto p = transition_density(r.prob.kernel_0T, r.sol.theta.back(), r.sol.theta.front());
    auto out = p.propagate(r.sol.rho.front());
    CHECK(l1_distance(out, r.sol.rho.back()) <= 1e-3);
    auto ref = sample(out.grid, [](double x) { return oracle::gauss_rho(x, 1); });
    CHECK(l1_distance(out, ref) <= 1e-3);
}

TEST_CASE("transition densities compose (Markov property)") {
    const auto& r = gauss();
    // edge rows of restricted kernels lose the mass of paths that leave the grid
    TransitionOptions opt;
    opt.check_window = std::pair{-6.0, 6.0};
    auto p02 = transition_density(*r.prob.from_start[2], r.sol.theta[2], r.sol.theta[0], opt);
    auto p24 = transition_density(*r.prob.to_end[2], r.sol.theta[4], r.sol.theta[2], opt);
    auto p04 = transition_density(r.prob.kernel_0T, r.sol.theta[4], r.sol.theta[0], opt);
    auto c = compose(p02, p24);
    const std::size_t n = c.size();
    double worst = 0, peak = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(c.grid.node(i)) > 4 || std::abs(c.grid.node(j)) > 4) continue;
            worst = std::max(worst, std::abs(c(i, j) - p04(i, j)));
            peak = std::max(peak, p04(i, j));
        }
    }
    CHECK(worst <= 1e-8 * peak);
    CHECK_THROWS(compose(p24, p02));
}

TEST_CASE("gauge covariance") {
    const auto& r = gauss();
    const double lam = 3.7;
    auto scale = [](const Profile& p, double a) {
        auto v = p.values;
        for (double& x : v) x *= a;
        return Profile(p.grid, v, p.time);
    };
    auto f2 = scale(r.sol.f, lam), g2 = scale(r.sol.g, 1 / lam);
    auto m1 = joint_density(r.prob.kernel_0T, r.sol.f, r.sol.g);
    auto m2 = joint_density(r.prob.kernel_0T, f2, g2);
    for (std::size_t e = 0; e < m1.size(); e += 97) CHECK(m2[e] == doctest::Approx(m1[e]).epsilon(1e-14));
    for (std::size_t k = 0; k < r.sol.times.size(); ++k) {
        const KernelMatrix* a = r.prob.from_start[k] ? &*r.prob.from_start[k] : nullptr;
        const KernelMatrix* b = r.prob.to_end[k] ? &*r.prob.to_end[k] : nullptr;
        auto [th, ths] = propagate_theta(f2, g2, r.sol.times[k], a, b);
        auto drift = drift_field(th);
        for (std::size_t i = 0; i < th.size(); i += 7) {
            CHECK(th[i] * ths[i] == doctest::Approx(r.sol.rho[k][i]).epsilon(1e-13).scale(1e-300));
            CHECK(std::abs(drift[i] - r.sol.drift[k][i]) <= 1e-9);
        }
    }
    auto p1 = transition_density(r.prob.kernel_0T, r.sol.g, r.sol.theta.front());
    auto p2 = transition_density(r.prob.kernel_0T, g2, scale(r.sol.theta.front(), 1 / lam));
    for (std::size_t e = 0; e < p1.entries.size(); e += 101) CHECK(p2.entries[e] == doctest::Approx(p1.entries[e]).epsilon(1e-13));
}

TEST_CASE("free transition density with theta = 1 is the kernel") {
    auto g = make_uniform_grid(-8, 8, 161);
    auto k = heat_kernel_matrix(g, 0, 0.5);
    auto one = sample(g, [](double) { return 1.0; });
    TransitionOptions opt;
    opt.check_window = std::pair{-3.0, 3.0};
    auto p = transition_density(k, one, one, opt);
    CHECK(p.max_row_deviation <= 1e-6);
    // checked rows are renormalized by their Gaussian tail mass, about 3e-7
    for (std::size_t e = 0; e < k.entries.size(); e += 13) CHECK(p.entries[e] == doctest::Approx(k.entries[e]).epsilon(1e-6));
    // unchecked, the truncated edge rows are an error
    CHECK_THROWS_AS(transition_density(k, one, one), IncompatibleDataError);
}

TEST_CASE("harmonic stationary transition density preserves the invariant density") {
    auto g = make_uniform_grid(-8, 8, 401);
    auto k = harmonic_kernel_matrix(g, 0, 0.7);
    auto g0 = sample(g, [](double x) { return std::pow(std::numbers::pi, -0.25) * std::exp(-x * x / 2); });
    auto p = transition_density(k, g0, g0);
    auto rho = sample(g, [](double x) { return std::exp(-x * x) / std::sqrt(std::numbers::pi); });
    CHECK(l1_distance(p.propagate(rho), rho) <= 1e-8);
    auto b = drift_field(g0);
    for (std::size_t i = 1; i + 1 < g.size(); i += 20) CHECK(b[i] == doctest::Approx(-2 * g.node(i)).epsilon(1e-9).scale(1));
}

TEST_CASE("solver error paths") {
    auto g = make_uniform_grid(-5, 5, 101);
    auto k = heat_kernel_matrix(g, 0, 1);
    auto rho = normalize(sample(g, [](double x) { return std::exp(-x * x); }, 0));
    Profile rhoT(g, rho.values, 1);

    // nodal marginal
    auto nodal = normalize(sample(g, [](double x) { return x * x * std::exp(-x * x); }, 0));
    CHECK_THROWS_AS(solve_schrodinger_system(make_bridge_problem(nodal, rhoT, k)), NodalDataError);

    // forced non-convergence keeps the partial solution
    BridgeOptions opt;
    opt.max_iter = 1;
    opt.tol = 1e-14;
    try {
        solve_schrodinger_system(make_bridge_problem(rho, rhoT, k), opt);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.iterations() == 1);
        CHECK(e.residual() > 1e-14);
        CHECK(e.partial().rho.size() == 2);
    }

    // a kernel with an empty row cannot be scaled
    auto bad = k;
    for (std::size_t j = 0; j < g.size(); ++j) bad.entries[50 * g.size() + j] = 0;
    CHECK_THROWS_AS(solve_schrodinger_system(make_bridge_problem(rho, rhoT, bad)), IncompatibleDataError);

    // wrong times and unnormalized data
    CHECK_THROWS(solve_schrodinger_system(make_bridge_problem(rho, Profile(g, rho.values, 2), k)));
    auto heavy = sample(g, [](double x) { return 2 * std::exp(-x * x); }, 0);
    CHECK_THROWS(solve_schrodinger_system(make_bridge_problem(heavy, rhoT, k)));
}

TEST_CASE("underflowing tails are floored with a warning") {
    auto g = make_uniform_grid(-12, 12, 241);
    auto k = heat_kernel_matrix(g, 0, 1);
    auto rho = normalize(sample(g, [](double x) { return std::exp(-x * x); }, 0));
    Profile rhoT(g, rho.values, 1);
    auto sol = solve_schrodinger_system(make_bridge_problem(rho, rhoT, k));
    CHECK(!sol.warnings.empty());
    for (double v : sol.f.values) CHECK(v > 0);
}

TEST_CASE("slice csv round trip") {
    const auto& r = gauss();
    const auto dir = (std::filesystem::temp_directory_path() / "fkbridge_slices_test").string();
    std::filesystem::remove_all(dir);
    write_solution_slices(r.sol, dir);
    auto back = read_solution_slices(dir);
    CHECK(back.times == r.sol.times);
    for (std::size_t k = 0; k < back.times.size(); ++k) {
        CHECK(back.rho[k].values == r.sol.rho[k].values);
        CHECK(back.drift[k].values == r.sol.drift[k].values);
    }
    std::filesystem::remove_all(dir);
}
