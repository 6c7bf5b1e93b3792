#include <cmath>

#include "doctest.h"
#include "fkbridge/potentials.hpp"
#include "oracles.hpp"

using namespace fkbridge;

namespace {

// |psi|^2 of the node-forming free evolution, up to its constant.
double moving_rho(double x, double t) {
    const double a = 1 + t * t;
    return std::pow(a, -2.5) * std::exp(-x * x / (2 * a)) *
           (x * x * x * x / 4 - x * x * t * t + t * t * a);
}

}  // namespace

TEST_CASE("catalog values") {
    CHECK(PotentialSpec::gaussian_case()(0, 0) == -1.0);
    CHECK(PotentialSpec::harmonic()(1, 0.3) == 0.0);
    CHECK(PotentialSpec::harmonic()(1, -7) == 0.0);
    CHECK(PotentialSpec::nodal_case()(0, 0) == -3.0);
    CHECK(PotentialSpec::free()(3, 2) == 0.0);

    auto cf = PotentialSpec::centrifugal(1.0);
    CHECK(cf.energy() == 5.0);
    CHECK(cf(1.0, 0.0) == doctest::Approx(-2.0));
    CHECK(std::isinf(cf(0.0, 0.0)));
    CHECK(cf.singular_set() == std::vector<double>{0.0});
    CHECK(cf.has_static_singularities());

    auto mn = PotentialSpec::moving_node(0.0);
    CHECK(mn(1.0, 0.0) == doctest::Approx(-0.25).epsilon(1e-14));
    CHECK(mn(2.0, 0.0) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(std::isinf(mn(0.0, 0.0)));
    CHECK(std::isfinite(mn(0.0, 0.5)));
    CHECK(!mn.has_static_singularities());
    auto shifted = PotentialSpec::moving_node(0.7);
    CHECK(shifted(1.3, 1.1) == doctest::Approx(mn(1.3, 0.4)).epsilon(1e-13));
}

TEST_CASE("centrifugal ground energy and gamma domain") {
    CHECK(centrifugal_ground_energy(1.0) == 5.0);
    CHECK(centrifugal_ground_energy(0.0) == 3.0);
    CHECK_THROWS(centrifugal_ground_energy(-0.125));
    CHECK_THROWS(PotentialSpec::centrifugal(-0.05));
    auto c0 = PotentialSpec::centrifugal(0.0);
    CHECK(c0.singular_set().empty());
    CHECK(c0(0.0, 0.0) == -3.0);
}

TEST_CASE("lower bounds hold on grids") {
    auto g = make_uniform_grid(-8, 8, 1601);
    const std::vector<PotentialSpec> specs = {
        PotentialSpec::free(),           PotentialSpec::harmonic(),
        PotentialSpec::gaussian_case(),  PotentialSpec::nodal_case(),
        PotentialSpec::centrifugal(1.0), PotentialSpec::centrifugal(0.3),
        PotentialSpec::moving_node(0.0)};
    for (const auto& s : specs) {
        CHECK(std::isfinite(s.lower_bound()));
        for (double t : {0.0, 0.01, 0.3, 1.0, 2.0})
            for (double x : g.nodes()) {
                const double c = s(x, t);
                if (std::isfinite(c)) CHECK(c >= s.lower_bound() - 1e-12);
            }
    }
}

TEST_CASE("nonsingular catalog potentials are continuous along the grid") {
    const std::vector<PotentialSpec> specs = {PotentialSpec::harmonic(), PotentialSpec::gaussian_case(),
                                              PotentialSpec::nodal_case()};
    for (const auto& s : specs) {
        auto jump = [&](std::size_t n) {
            auto g = make_uniform_grid(-8, 8, n);
            double m = 0;
            for (std::size_t i = 1; i < n; ++i) m = std::max(m, std::abs(s(g.node(i), 0.4) - s(g.node(i - 1), 0.4)));
            return m;
        };
        CHECK(jump(801) < 0.6 * jump(401));
    }
}

TEST_CASE("tabulated potential interpolates in x and t") {
    auto g = make_uniform_grid(0, 1, 3);
    auto tab = PotentialSpec::tabulated({Profile(g, {0, 1, 2}, 0.0), Profile(g, {2, 3, 4}, 1.0)});
    CHECK(tab(0.25, 0.5) == doctest::Approx(1.5));
    CHECK(tab.time_dependent());
    CHECK(tab.lower_bound() == 0.0);
    CHECK_THROWS_AS(evaluate_potential(tab, 0.5, 1.5), std::out_of_range);
    CHECK_THROWS(PotentialSpec::tabulated({Profile(g, {0, 1, 2}, 1.0), Profile(g, {2, 3, 4}, 0.0)}));
    auto single = PotentialSpec::tabulated({Profile(g, {0, 1, 2}, 0.0)});
    CHECK(!single.time_dependent());
    CHECK(single(0.5, 99.0) == 1.0);
}

TEST_CASE("quantum potential of a Gaussian") {
    auto g = make_uniform_grid(-8, 8, 401);
    auto rho = sample(g, [](double x) { return std::exp(-x * x / 2); });
    auto q = quantum_potential_from_density(rho);
    const double h2 = g.spacing() * g.spacing();
    CHECK(std::abs(q[200] + 0.5) < 2 * h2);
    for (std::size_t i = 1; i + 1 < g.size(); i += 37) {
        const double x = g.node(i);
        CHECK(std::abs(q[i] - (x * x / 4 - 0.5)) < 2 * h2 * (1 + x * x * x * x));
    }
}

TEST_CASE("twice the quantum potential of the spreading Gaussian is the Gaussian-case potential") {
    auto c = PotentialSpec::gaussian_case();
    for (double t : {0.0, 0.5, 1.0}) {
        auto g = make_uniform_grid(-6, 6, 601);
        auto rho = sample(g, [&](double x) { return oracle::gauss_rho(x, t); }, t);
        auto q = quantum_potential_from_density(rho);
        for (std::size_t i = 1; i + 1 < g.size(); i += 25) CHECK(2 * q[i] == doctest::Approx(c(g.node(i), t)).epsilon(1e-3).scale(1));
    }
}

TEST_CASE("quantum potential is invariant under density scaling") {
    auto g = make_uniform_grid(-5, 5, 201);
    auto rho = sample(g, [](double x) { return std::exp(-x * x / 3) * (1.5 + std::sin(x)); });
    auto scaled = sample(g, [](double x) { return 123.0 * std::exp(-x * x / 3) * (1.5 + std::sin(x)); });
    auto a = quantum_potential_from_density(rho);
    auto b = quantum_potential_from_density(scaled);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9 * (1 + std::abs(a[i])));
}

TEST_CASE("quantum potential rejects non-positive densities") {
    auto g = make_uniform_grid(-1, 1, 21);
    CHECK_THROWS(quantum_potential_from_density(sample(g, [](double x) { return x * x; })));
}

TEST_CASE("moving node potential agrees with the quantum potential of its density") {
    // at t = 0 on x > 0: c = x^2/4 + 2/x^2 - 5/2
    auto g = make_uniform_grid(0.5, 6, 1101);
    auto q = quantum_potential_from_density(sample(g, [](double x) { return moving_rho(x, 0); }));
    for (std::size_t i = 1; i + 1 < g.size(); i += 50) {
        const double x = g.node(i);
        CHECK(q[i] == doctest::Approx(x * x / 4 + 2 / (x * x) - 2.5).epsilon(1e-4).scale(1));
    }
    // and at t != 0 on the whole line
    auto mn = PotentialSpec::moving_node(0.0);
    for (double t : {-0.8, 0.3, 1.0}) {
        auto gw = make_uniform_grid(-6, 6, 2401);
        auto qw = quantum_potential_from_density(sample(gw, [&](double x) { return moving_rho(x, t); }, t));
        for (std::size_t i = 1; i + 1 < gw.size(); i += 97) CHECK(qw[i] == doctest::Approx(mn(gw.node(i), t)).epsilon(1e-3).scale(1));
    }
}

TEST_CASE("potential from drift") {
    auto g = make_uniform_grid(-8, 8, 401);
    auto c = potential_from_drift(sample(g, [](double x) { return -2 * x; }));
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = g.node(i);
        CHECK(c[i] == doctest::Approx(x * x - 1).epsilon(1e-12).scale(1));
    }
    auto c0 = potential_from_drift(sample(g, [](double) { return 0.0; }));
    for (double v : c0.values) CHECK(v == 0.0);

    // Gaussian case at t = 0: b = -x and d/dt ln g = x^2/4 - 1/2
    auto b = sample(g, [](double x) { return oracle::gauss_drift(x, 0); });
    const double dt = 1e-5;
    auto dlg = sample(g, [&](double x) {
        return (std::log(oracle::gauss_g(x, dt)) - std::log(oracle::gauss_g(x, -dt))) / (2 * dt);
    });
    auto cg = potential_from_drift(b, dlg);
    auto ref = PotentialSpec::gaussian_case();
    for (std::size_t i = 0; i < g.size(); i += 20) CHECK(cg[i] == doctest::Approx(ref(g.node(i), 0)).epsilon(1e-6).scale(1));

    CHECK_THROWS(potential_from_drift(b, sample(make_uniform_grid(-8, 8, 11), [](double) { return 0.0; })));
}

TEST_CASE("gradient and laplacian are exact on quadratics") {
    auto g = make_uniform_grid(-1, 2, 13);
    auto p = sample(g, [](double x) { return 3 * x * x - x + 2; });
    auto d = gradient(g, p.values);
    auto l = laplacian(g, p.values);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(d[i] == doctest::Approx(6 * g.node(i) - 1).epsilon(1e-10).scale(1));
        CHECK(l[i] == doctest::Approx(6).epsilon(1e-9));
    }
}
