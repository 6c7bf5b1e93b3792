#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fkbridge/grid.hpp"
#include "fkbridge/parallel.hpp"
#include "oracles.hpp"

using namespace fkbridge;

TEST_CASE("uniform grid nodes and spacing") {
    auto g = make_uniform_grid(-1, 1, 3);
    CHECK(g.spacing() == 1.0);
    CHECK(g.node(0) == -1.0);
    CHECK(g.node(1) == 0.0);
    CHECK(g.node(2) == 1.0);

    auto g2 = make_uniform_grid(0, 10, 11);
    CHECK(g2.spacing() == 1.0);
    CHECK(g2.node(5) == 5.0);

    auto g3 = make_uniform_grid(-8, 8, 401);
    CHECK(g3.spacing() == doctest::Approx(0.04).epsilon(1e-14));
    CHECK(g3.node(400) == 8.0);
    for (std::size_t i = 1; i < g3.size(); ++i) CHECK(g3.node(i) > g3.node(i - 1));
}

TEST_CASE("grid rejects bad input") {
    CHECK_THROWS_AS(make_uniform_grid(0, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(make_uniform_grid(1, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(make_uniform_grid(0, INFINITY, 5), std::invalid_argument);
    CHECK_THROWS_AS(make_uniform_grid(NAN, 1, 5), std::invalid_argument);
}

TEST_CASE("time grid") {
    TimeGrid tg(0.0, 1.0, 11);
    CHECK(tg.time(0) == 0.0);
    CHECK(tg.time(10) == 1.0);
    CHECK(tg.index_of(0.5) == 5);
    CHECK(tg.index_of(0.55) == TimeGrid::npos);
    CHECK_THROWS(TimeGrid(1.0, 1.0, 3));
    CHECK_THROWS(TimeGrid(0.0, 1.0, 1));
}

TEST_CASE("profile validation") {
    auto g = make_uniform_grid(0, 1, 5);
    CHECK_THROWS(Profile(g, {1, 2, 3}));
    CHECK_THROWS(Profile(g, {1, 2, 3, NAN, 5}));
    Profile p(g, {0, 1, 2, 3, 4});
    CHECK(p.interpolate(0.125) == doctest::Approx(0.5));
    CHECK(p.interpolate(-3) == 0.0);
    CHECK(p.interpolate(7) == 4.0);
}

TEST_CASE("trapezoid integration") {
    auto g = make_uniform_grid(0, 1, 11);
    CHECK(integrate(sample(g, [](double) { return 1.0; })) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(integrate(sample(g, [](double x) { return x; })) == doctest::Approx(0.5).epsilon(1e-15));

    auto g8 = make_uniform_grid(-8, 8, 401);
    auto phi = sample(g8, [](double x) { return oracle::normal_pdf(x, 1.0); });
    const double exact = oracle::normal_cdf(8) - oracle::normal_cdf(-8);
    CHECK(std::abs(integrate(phi) - exact) < 1e-6);
}

TEST_CASE("integration is linear") {
    auto g = make_uniform_grid(-2, 3, 57);
    auto p = sample(g, [](double x) { return std::sin(x); });
    auto q = sample(g, [](double x) { return x * x; });
    const double a = 1.7, b = -0.3;
    auto r = sample(g, [&](double x) { return a * std::sin(x) + b * x * x; });
    CHECK(integrate(r) == doctest::Approx(a * integrate(p) + b * integrate(q)).epsilon(1e-13));
}

TEST_CASE("trapezoid error is second order on a Gaussian") {
    // window [-1, 1] keeps the error well above rounding
    auto err = [](std::size_t n) {
        auto g = make_uniform_grid(-1, 1, n);
        auto p = sample(g, [](double x) { return oracle::normal_pdf(x, 1.0); });
        return std::abs(integrate(p) - (oracle::normal_cdf(1) - oracle::normal_cdf(-1)));
    };
    const double ratio = err(41) / err(81);
    CHECK(ratio == doctest::Approx(4.0).epsilon(0.02));
}

TEST_CASE("normalize") {
    auto g = make_uniform_grid(0, 1, 11);
    auto c = normalize(sample(g, [](double) { return 2.0; }));
    for (double v : c.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

    auto g8 = make_uniform_grid(-8, 8, 401);
    auto p = normalize(sample(g8, [](double x) { return std::exp(-x * x / 2); }));
    CHECK(p[200] == doctest::Approx(1.0 / std::sqrt(2 * std::numbers::pi)).epsilon(1e-6));
    CHECK(integrate(p) == doctest::Approx(1.0).epsilon(1e-12));

    auto pp = normalize(p);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(pp[i] - p[i]) <= 1e-12 * p[i] + 1e-300);

    auto scaled = sample(g8, [](double x) { return 37.0 * std::exp(-x * x / 2); });
    auto ps = normalize(scaled);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(ps[i] == doctest::Approx(p[i]).epsilon(1e-13));

    CHECK_THROWS(normalize(sample(g, [](double x) { return x - 0.5; })));
    CHECK_THROWS(normalize(sample(g, [](double) { return 0.0; })));
}

TEST_CASE("l1 distance") {
    auto g = make_uniform_grid(0, 1, 11);
    auto one = sample(g, [](double) { return 1.0; });
    auto zero = sample(g, [](double) { return 0.0; });
    CHECK(l1_distance(one, one) == 0.0);
    CHECK(l1_distance(one, zero) == doctest::Approx(1.0));
    CHECK_THROWS(l1_distance(one, sample(make_uniform_grid(0, 1, 12), [](double) { return 1.0; })));

    auto g8 = make_uniform_grid(-8, 8, 4001);
    auto a = sample(g8, [](double x) { return oracle::normal_pdf(x, 1.0); });
    auto b = sample(g8, [](double x) { return oracle::normal_pdf(x, 2.0); });
    CHECK(l1_distance(a, b) == doctest::Approx(oracle::l1_centered_normals(1.0, std::sqrt(2.0))).epsilon(1e-5));
    CHECK(l1_distance(a, b) == l1_distance(b, a));
}

TEST_CASE("l1 triangle inequality on random profiles") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    auto g = make_uniform_grid(0, 1, 31);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = sample(g, [&](double) { return u(rng); });
        auto q = sample(g, [&](double) { return u(rng); });
        auto r = sample(g, [&](double) { return u(rng); });
        CHECK(l1_distance(p, r) <= l1_distance(p, q) + l1_distance(q, r) + 1e-15);
    }
}

TEST_CASE("profile csv round trip") {
    auto g = make_uniform_grid(-2, 2, 9);
    auto p = sample(g, [](double x) { return std::exp(-x * x) / 3.0; }, 0.375);
    std::stringstream ss;
    write_profile_csv(ss, p);
    CHECK(ss.str().rfind("# time=0.375\nx,value\n", 0) == 0);
    auto q = read_profile_csv(ss);
    CHECK(q.time == 0.375);
    CHECK(q.grid == g);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(q[i] == p[i]);
}

TEST_CASE("pairwise sum and parallel_for") {
    std::vector<double> v(1001);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (i + 1);
    double naive = 0;
    for (double x : v) naive += x;
    CHECK(pairwise_sum(v.data(), v.size()) == doctest::Approx(naive).epsilon(1e-14));

    const auto saved = worker_count();
    for (std::size_t w : {1u, 3u}) {
        set_worker_count(w);
        std::vector<int> hit(100, 0);
        parallel_for(hit.size(), [&](std::size_t a, std::size_t b) {
            for (std::size_t i = a; i < b; ++i) hit[i] += 1;
        });
        for (int h : hit) CHECK(h == 1);
        CHECK_THROWS_AS(parallel_for(10, [](std::size_t, std::size_t) { throw std::runtime_error("x"); }),
                        std::runtime_error);
    }
    set_worker_count(saved);
}
