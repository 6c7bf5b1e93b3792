#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fkbridge/errors.hpp"
#include "fkbridge/kernel.hpp"
#include "fkbridge/parallel.hpp"
#include "oracles.hpp"

using namespace fkbridge;

namespace {

// Relative sup-norm error over nodes with |y|, |x| <= r.
double sup_rel_error(const KernelMatrix& k, double r, auto&& ref) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double y = k.grid.node(i);
        if (std::abs(y) > r) continue;
        for (std::size_t j = 0; j < k.size(); ++j) {
            const double x = k.grid.node(j);
            if (std::abs(x) > r) continue;
            const double e = ref(y, x);
            num = std::max(num, std::abs(k(i, j) - e));
            den = std::max(den, std::abs(e));
        }
    }
    return num / den;
}

// Dirichlet heat kernel on [-1, 1] by the method of images.
double interval_heat(double y, double x, double tau) {
    double s = 0;
    for (int n = -20; n <= 20; ++n) s += oracle::heat(y, x + 4 * n, tau) - oracle::heat(y, 2 - x + 4 * n, tau);
    return s;
}

}  // namespace

TEST_CASE("heat kernel closed form") {
    CHECK(heat_kernel(0, 0, 1) == doctest::Approx(0.2820947917738781).epsilon(1e-15));
    CHECK(heat_kernel(0.3, -1.2, 0.7) == heat_kernel(-1.2, 0.3, 0.7));
    auto g = make_uniform_grid(-8, 8, 401);
    auto p = sample(g, [](double x) { return heat_kernel(0, x, 1); });
    // the window drops erfc(4) ~ 1.5e-8 of mass; quadrature itself is far more accurate
    CHECK(std::abs(integrate(p) - std::erf(4.0)) < 1e-10);
    CHECK_THROWS(heat_kernel(0, 0, 0));
    CHECK_THROWS(heat_kernel(0, 0, -1));
}

TEST_CASE("harmonic kernel matches the Hermite expansion") {
    for (double tau : {0.05, 0.5, 2.0})
        for (double y : {-1.5, 0.0, 0.7})
            for (double x : {-2.0, 0.0, 0.4, 1.9})
                CHECK(harmonic_kernel(y, x, tau) ==
                      doctest::Approx(oracle::harmonic_spectral(y, x, tau)).epsilon(1e-9));
    CHECK(std::abs(harmonic_kernel(0, 0, 10) - 1 / std::sqrt(std::numbers::pi)) < 1e-4);
    CHECK_THROWS(harmonic_kernel(0, 0, 0));
}

TEST_CASE("harmonic kernel solves its parabolic equation") {
    // d/dtau k = d2/dx2 k - (x^2 - 1) k
    const double d = 1e-3, tau = 0.4;
    for (double y : {-0.5, 0.8})
        for (double x : {-1.0, 0.0, 0.6, 1.5}) {
            const double kt = (harmonic_kernel(y, x, tau + d) - harmonic_kernel(y, x, tau - d)) / (2 * d);
            const double kxx = (harmonic_kernel(y, x + d, tau) - 2 * harmonic_kernel(y, x, tau) +
                                harmonic_kernel(y, x - d, tau)) /
                               (d * d);
            const double res = kt - kxx + (x * x - 1) * harmonic_kernel(y, x, tau);
            CHECK(std::abs(res) < 1e-5);
        }
}

TEST_CASE("PDE kernel reproduces the free heat kernel") {
    auto g = make_uniform_grid(-8, 8, 401);
    auto spec = PotentialSpec::free();
    auto k = assemble_kernel_pde(spec, g, 0, 1, suggested_steps(spec, g, 0, 1));
    CHECK(k.min_entry() >= 0);
    CHECK(k.clamped == 0);
    CHECK(sup_rel_error(k, 4, [](double y, double x) { return oracle::heat(y, x, 1); }) <= 1e-3);
    // rows integrate to one away from the truncation edges
    for (std::size_t i = 175; i <= 225; i += 25) {
        Profile row(g, std::vector<double>(k.row(i).begin(), k.row(i).end()));
        CHECK(integrate(row) == doctest::Approx(1).epsilon(1e-6));
    }
}

TEST_CASE("PDE kernel reproduces the harmonic kernel") {
    auto g = make_uniform_grid(-8, 8, 401);
    auto spec = PotentialSpec::harmonic();
    auto k = assemble_kernel_pde(spec, g, 0, 0.5, suggested_steps(spec, g, 0, 0.5));
    CHECK(sup_rel_error(k, 8, [](double y, double x) { return harmonic_kernel(y, x, 0.5); }) <= 1e-3);
    // strictly positive on the interior
    double mn = INFINITY;
    for (std::size_t i = 1; i + 1 < g.size(); ++i)
        for (std::size_t j = 1; j + 1 < g.size(); ++j) mn = std::min(mn, k(i, j));
    CHECK(mn > 0);
}

TEST_CASE("PDE kernel with Dirichlet ends matches the image series") {
    // ghost nodes one spacing beyond the grid sit exactly on -1 and 1
    const std::size_t n = 199;
    const double h = 2.0 / (n + 1);
    auto g = make_uniform_grid(-1 + h, 1 - h, n);
    auto spec = PotentialSpec::free();
    auto k = assemble_kernel_pde(spec, g, 0, 0.25, suggested_steps(spec, g, 0, 0.25));
    // end rows hold half-weight deltas, so compare from the second node inwards
    CHECK(sup_rel_error(k, 1 - 1.5 * h, [](double y, double x) { return interval_heat(y, x, 0.25); }) <= 2e-3);
}

TEST_CASE("forward and backward propagation are adjoint") {
    auto g = make_uniform_grid(-6, 6, 121);
    auto spec = PotentialSpec::gaussian_case();
    const std::size_t steps = suggested_steps(spec, g, 0, 1);
    auto k = assemble_kernel_pde(spec, g, 0, 1, steps);
    std::vector<double> f(g.size()), v(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        f[i] = std::exp(-g.node(i) * g.node(i) / 2) * (1.2 + std::sin(3 * g.node(i)));
        v[i] = std::exp(-std::abs(g.node(i) - 0.5));
    }
    auto fwd = propagate_forward(spec, g, f, 0, 1, steps);
    auto viaK = k.apply_transpose(f);
    for (std::size_t j = 0; j < g.size(); ++j) CHECK(fwd[j] == doctest::Approx(viaK[j]).epsilon(1e-11).scale(1e-300));
    auto bwd = propagate_backward(spec, g, v, 0, 1, steps);
    auto viaKb = k.apply(v);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(bwd[i] == doctest::Approx(viaKb[i]).epsilon(1e-11).scale(1e-300));
    // weighted pairing <u(t), v(t)> = <u(s), v(s)>
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        lhs += g.weight(i) * fwd[i] * v[i];
        rhs += g.weight(i) * f[i] * bwd[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("slice sweep equals per-pair assembly") {
    auto g = make_uniform_grid(-6, 6, 101);
    auto spec = PotentialSpec::gaussian_case();
    const std::vector<double> times = {0.0, 0.25, 0.5, 0.75, 1.0};
    const std::size_t per = 80;
    auto sw = assemble_kernel_sweep(spec, g, times, per);
    REQUIRE(sw.from_start.size() == 4);
    REQUIRE(sw.to_end.size() == 4);
    auto direct = assemble_kernel_pde(spec, g, 0.0, 0.5, 2 * per);
    auto late = assemble_kernel_pde(spec, g, 0.5, 1.0, 2 * per);
    double d1 = 0, d2 = 0, scale = 0;
    for (std::size_t e = 0; e < direct.entries.size(); ++e) {
        d1 = std::max(d1, std::abs(direct.entries[e] - sw.from_start[1].entries[e]));
        d2 = std::max(d2, std::abs(late.entries[e] - sw.to_end[2].entries[e]));
        scale = std::max(scale, direct.entries[e]);
    }
    CHECK(d1 <= 1e-12 * scale);
    CHECK(d2 <= 1e-12 * scale);
    CHECK(sw.from_start[3].t == 1.0);
    CHECK(sw.to_end[0].s == 0.0);
}

TEST_CASE("PDE assembly guards") {
    auto g = make_uniform_grid(-4, 4, 81);
    CHECK_THROWS_AS(assemble_kernel_pde(PotentialSpec::centrifugal(1.0), g, 0, 0.5, 10000),
                    SingularPotentialError);
    CHECK_THROWS_AS(assemble_kernel_pde(PotentialSpec::moving_node(0.3), g, 0, 0.5, 10000),
                    SingularPotentialError);
    // node outside [s, t] is harmless
    CHECK_NOTHROW(assemble_kernel_pde(PotentialSpec::moving_node(2.0), g, 0, 0.5, 2000));
    // stiffness bound
    CHECK_THROWS_AS(assemble_kernel_pde(PotentialSpec::harmonic(), g, 0, 1, 3), std::invalid_argument);
    CHECK_THROWS(assemble_kernel_pde(PotentialSpec::free(), g, 1, 1, 10));
    CHECK_THROWS(assemble_kernel_pde(PotentialSpec::free(), g, 0, 1, 0));

    // singular point on an end node acts as an absorbing wall
    auto half = make_uniform_grid(0, 4, 81);
    auto spec = PotentialSpec::centrifugal(1.0);
    auto k = assemble_kernel_pde(spec, half, 0, 0.1, suggested_steps(spec, half, 0, 0.1));
    CHECK(k.min_entry() >= 0);
    CHECK(k(0, 40) == 0.0);
    CHECK(k(20, 40) > 0.0);
}

TEST_CASE("too few steps are clamped and reported") {
    auto g = make_uniform_grid(-4, 4, 81);
    auto k = assemble_kernel_pde(PotentialSpec::free(), g, 0, 0.05, 1);
    CHECK(k.min_entry() >= 0);
    CHECK(k.clamped > 0);
}

TEST_CASE("Chapman-Kolmogorov residuals") {
    auto g = make_uniform_grid(-8, 8, 401);
    auto a = heat_kernel_matrix(g, 0, 0.5), b = heat_kernel_matrix(g, 0.5, 1), c = heat_kernel_matrix(g, 0, 1);
    CHECK(chapman_kolmogorov_residual(a, b, c, std::pair{-4.0, 4.0}) <= 1e-6);

    auto ha = harmonic_kernel_matrix(g, 0, 0.25), hb = harmonic_kernel_matrix(g, 0.25, 0.5),
         hc = harmonic_kernel_matrix(g, 0, 0.5);
    CHECK(chapman_kolmogorov_residual(ha, hb, hc) <= 1e-5);
    CHECK_THROWS(chapman_kolmogorov_residual(a, c, b));

    // near-identity element
    auto gs = make_uniform_grid(-6, 6, 121);
    auto spec = PotentialSpec::harmonic();
    auto kst = assemble_kernel_pde(spec, gs, 0, 1e-6, 1);
    auto ktu = assemble_kernel_pde(spec, gs, 1e-6, 0.5, 400);
    auto ksu = assemble_kernel_pde(spec, gs, 0, 0.5, 400);
    double peak = 0;
    for (double v : ksu.entries) peak = std::max(peak, v);
    CHECK(chapman_kolmogorov_residual(kst, ktu, ksu) <= 1e-3 * peak);
}

TEST_CASE("Monte Carlo free kernel") {
    auto spec = PotentialSpec::free();
    auto bridge = mc_kernel_estimate(spec, 0, 0, 0, 1, 100000, 64, 11);
    CHECK(bridge.n_excluded == 0);
    CHECK(std::abs(bridge.mean - 0.282095) <= 3 * bridge.std_error + 1e-6);

    McOptions opt;
    opt.n_paths = 100000;
    opt.n_time = 64;
    opt.seed = 11;
    opt.scheme = McScheme::ForwardLastStep;
    auto fwd = mc_kernel_estimate(spec, 0, 0, 0, 1, opt);
    CHECK(fwd.std_error > 0);
    CHECK(std::abs(fwd.mean - 0.282095) <= 3 * fwd.std_error);
}

TEST_CASE("Monte Carlo harmonic kernel") {
    auto est = mc_kernel_estimate(PotentialSpec::harmonic(), 0, 0, 0, 0.5, 100000, 100, 5);
    CHECK(std::abs(est.mean - harmonic_kernel(0, 0, 0.5)) <= 3 * est.std_error);
    CHECK(est.std_error > 0);
}

TEST_CASE("Monte Carlo first-exit killing matches the Dirichlet kernel") {
    McOptions opt;
    opt.n_paths = 100000;
    opt.n_time = 64;
    opt.seed = 3;
    opt.domain = std::pair{-1.0, 1.0};
    auto est = mc_kernel_estimate(PotentialSpec::free(), 0.2, -0.3, 0, 0.3, opt);
    CHECK(est.n_excluded > 0);
    CHECK(std::abs(est.mean - interval_heat(0.2, -0.3, 0.3)) <= 3 * est.std_error);
    CHECK_THROWS(mc_kernel_estimate(PotentialSpec::free(), 2.0, 0, 0, 0.3, opt));
}

TEST_CASE("Monte Carlo Wiener exclusion across a centrifugal barrier") {
    auto spec = PotentialSpec::centrifugal(1.0);
    for (std::size_t nt : {16u, 64u}) {
        auto cross = mc_kernel_estimate(spec, -1, 1, 0, 0.5, 20000, nt, 1);
        CHECK(cross.mean == 0.0);
        CHECK(cross.n_excluded == cross.n_paths);
    }
    auto same = mc_kernel_estimate(spec, 0.5, 1, 0, 0.5, 20000, 64, 1);
    CHECK(same.mean > 5 * same.std_error);
    CHECK_THROWS_AS(mc_kernel_estimate(spec, 0, 1, 0, 0.5, 100, 16, 1), SingularPotentialError);
    CHECK_THROWS(mc_kernel_estimate(spec, 0.5, 1, 0, 0.5, 100, 4, 1));
}

TEST_CASE("Monte Carlo is deterministic across worker counts") {
    const auto saved = worker_count();
    McOptions opt;
    opt.n_paths = 5000;
    opt.n_time = 32;
    opt.seed = 99;
    opt.scheme = McScheme::ForwardLastStep;
    set_worker_count(1);
    auto a = mc_kernel_estimate(PotentialSpec::harmonic(), 0.3, -0.2, 0, 0.5, opt);
    set_worker_count(4);
    auto b = mc_kernel_estimate(PotentialSpec::harmonic(), 0.3, -0.2, 0, 0.5, opt);
    set_worker_count(saved);
    CHECK(a.mean == b.mean);
    CHECK(a.std_error == b.std_error);
    opt.seed = 100;
    auto c = mc_kernel_estimate(PotentialSpec::harmonic(), 0.3, -0.2, 0, 0.5, opt);
    CHECK(c.mean != a.mean);
}

TEST_CASE("FKK1 round trip") {
    auto g = make_uniform_grid(-2, 3, 7);
    auto k = heat_kernel_matrix(g, 0.25, 1.5);
    std::stringstream ss;
    write_kernel_binary(ss, k);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "FKK1");
    CHECK(bytes.size() == 4 + 6 * 8 + 49 * 8);
    auto r = read_kernel_binary(ss);
    CHECK(r.grid == g);
    CHECK(r.s == 0.25);
    CHECK(r.t == 1.5);
    CHECK(r.entries == k.entries);

    std::stringstream bad("FKK2xxxxxxxx");
    CHECK_THROWS(read_kernel_binary(bad));
    std::stringstream truncated(bytes.substr(0, 60));
    CHECK_THROWS(read_kernel_binary(truncated));

    std::stringstream csv;
    write_kernel_csv(csv, k);
    std::string line;
    std::getline(csv, line);
    std::getline(csv, line);
    CHECK(line == "y,x,k");
}
