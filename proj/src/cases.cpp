#include "fkbridge/cases.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "fkbridge/bridge.hpp"
#include "fkbridge/diffusion.hpp"
#include "fkbridge/errors.hpp"
#include "fkbridge/parallel.hpp"

namespace fkbridge {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

double step_eps(double x) { return x < 0.0 ? 1.0 : 0.0; }

void require_off_node(double x, const char* what) {
    if (x == 0.0) throw std::domain_error(std::string(what) + " is singular at the node x = 0");
}

// Exponent p of the regular half-line ground state x^p e^{-x^2/2}.
double centrifugal_power(double gamma) { return 0.5 * (1.0 + std::sqrt(1.0 + 8.0 * gamma)); }

double gaussian_ref(const std::string& q, double x, double t) {
    const double a = 1.0 + t * t;
    if (q == "rho") return std::exp(-x * x / (2.0 * a)) / std::sqrt(2.0 * kPi * a);
    if (q == "f") return std::pow(2.0 * kPi * a, -0.25) * std::exp(-x * x * (1.0 + t) / (4.0 * a) + 0.5 * std::atan(t));
    if (q == "g") return std::pow(2.0 * kPi * a, -0.25) * std::exp(-x * x * (1.0 - t) / (4.0 * a) - 0.5 * std::atan(t));
    if (q == "b") return -(1.0 - t) * x / a;
    if (q == "c") return x * x / (2.0 * a * a) - 1.0 / a;
    if (q == "v") return x * t / a;
    if (q == "R") return -0.25 * std::log(2.0 * kPi * a) - x * x / (4.0 * a);
    if (q == "S") return x * x * t / (4.0 * a) - 0.5 * std::atan(t);
    throw std::invalid_argument("gaussian_spread: no quantity " + q);
}

double stable_node_ref(const std::string& q, double x, double t) {
    const double a = 1.0 + t * t;
    const double pre = std::pow(2.0 * kPi, -0.25) * std::pow(a, -0.75) * std::abs(x);
    if (q == "rho") return std::pow(2.0 * kPi, -0.5) * std::pow(a, -1.5) * x * x * std::exp(-x * x / (2.0 * a));
    if (q == "g")
        return pre * std::exp(-x * x * (1.0 - t) / (4.0 * a)) * std::exp(-1.5 * std::atan(t) + kPi * step_eps(x));
    if (q == "f")
        return pre * std::exp(-x * x * (1.0 + t) / (4.0 * a)) * std::exp(1.5 * std::atan(t) - kPi * step_eps(x));
    if (q == "b") {
        require_off_node(x, "stable_node drift");
        return 2.0 / x - x * (1.0 - t) / a;
    }
    if (q == "c") return x * x / (2.0 * a * a) - 3.0 / a;
    if (q == "v") return x * t / a;
    if (q == "R") {
        require_off_node(x, "stable_node R");
        return -0.25 * std::log(2.0 * kPi) - 0.75 * std::log(a) + std::log(std::abs(x)) - x * x / (4.0 * a);
    }
    if (q == "S") {
        require_off_node(x, "stable_node phase");
        return x * x * t / (4.0 * a) - 1.5 * std::atan(t) + (x < 0.0 ? kPi : 0.0);
    }
    throw std::invalid_argument("stable_node: no quantity " + q);
}

double hermite_state(int n, double x) {
    const double g0 = std::pow(kPi, -0.25) * std::exp(-0.5 * x * x);
    if (n == 0) return g0;
    double prev = g0, cur = std::sqrt(2.0) * x * g0;
    for (int k = 1; k < n; ++k) {
        const double next = std::sqrt(2.0 / (k + 1)) * x * cur - std::sqrt(static_cast<double>(k) / (k + 1)) * prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

double harmonic_ref(const std::string& q, double x, double) {
    if (q == "rho") return std::exp(-x * x) / std::sqrt(kPi);
    if (q == "f" || q == "g" || q == "ground_state") return hermite_state(0, x);
    if (q == "b") return -2.0 * x;
    if (q == "c") return x * x - 1.0;
    if (q == "v" || q == "S") return 0.0;
    if (q == "R") return -0.25 * std::log(kPi) - 0.5 * x * x;
    throw std::invalid_argument("harmonic: no quantity " + q);
}

double centrifugal_ref(double gamma, const std::string& q, double x, double) {
    const double p = centrifugal_power(gamma);
    // normalized over the whole line: int |x|^{2p} e^{-x^2} = Gamma(p + 1/2)
    const double norm = 1.0 / std::sqrt(std::tgamma(p + 0.5));
    const double g0 = norm * std::pow(std::abs(x), p) * std::exp(-0.5 * x * x);
    if (q == "rho") return g0 * g0;
    if (q == "f" || q == "g" || q == "ground_state") return g0;
    if (q == "b") {
        require_off_node(x, "centrifugal drift");
        return 2.0 * (p / x - x);
    }
    if (q == "c") return x == 0.0 && gamma != 0.0 ? kInf : x * x + (gamma == 0.0 ? 0.0 : 2.0 * gamma / (x * x)) - centrifugal_ground_energy(gamma);
    if (q == "v") return 0.0;
    throw std::invalid_argument("centrifugal: no quantity " + q);
}

double moving_node_ref(double alpha, const std::string& q, double x, double t) {
    const double tau = t - alpha;
    const double a = 1.0 + tau * tau;
    if (q == "rho") {
        const double w = 0.25 * x * x * x * x - x * x * tau * tau + tau * tau * a;
        return 4.0 / (3.0 * std::sqrt(2.0 * kPi)) * std::pow(a, -2.5) * std::exp(-x * x / (2.0 * a)) * w;
    }
    if (q == "c") return evaluate_potential(PotentialSpec::moving_node(alpha), x, t);
    throw std::invalid_argument("moving_node: no quantity " + q);
}

// Energy levels of -1/2 Laplacian + m^2 x^2 / 2 + gamma / x^2.
double dimensional_centrifugal_energy(double m, double gamma, int n) {
    return m * (2.0 * n + 1.0 + 0.5 * std::sqrt(1.0 + 8.0 * gamma));
}

int level_of(double x) {
    if (!(x >= 0.0) || x != std::floor(x) || x > 1e6) throw std::invalid_argument("eigenvalue: level must be a nonnegative integer");
    return static_cast<int>(x);
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Relative L2 residual of (-D2 + V - E) g at interior nodes.
double eigen_residual(const Grid& grid, const std::function<double(double)>& g, const std::function<double(double)>& V,
                      double E) {
    const double h = grid.spacing();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
        const double x = grid.node(i);
        const double gm = g(grid.node(i - 1)), g0 = g(x), gp = g(grid.node(i + 1));
        const double r = -(gp - 2.0 * g0 + gm) / (h * h) + (V(x) - E) * g0;
        num += r * r;
        den += g0 * g0;
    }
    return std::sqrt(num / den);
}

double order_of(double coarse, double fine) {
    if (!(fine > 0.0) || !(coarse > 0.0)) return kInf;
    return std::log2(coarse / fine);
}

// Grid nodes where fn is evaluated for closed-form identities.
struct Window {
    double lo, hi;
};

// max |2 d/dx ln g - b| by central differences at spacing h over the window,
// skipping points within `skip` of a node.
double drift_identity_error(const CaseDefinition& c, double h, double t, Window w, double skip) {
    double err = 0.0;
    for (double x = w.lo; x <= w.hi + 1e-12; x += 0.05) {
        bool near = false;
        for (double z : c.nodes) near = near || std::abs(x - z) < skip;
        if (near) continue;
        const double lg = std::log(evaluate_reference(c, "g", x + h, t)) - std::log(evaluate_reference(c, "g", x - h, t));
        err = std::max(err, std::abs(lg / h - evaluate_reference(c, "b", x, t)));
    }
    return err;
}

double b_rho(const CaseDefinition& c, double x, double t) {
    if (x == 0.0 && !c.nodes.empty()) return 0.0;  // b rho is smooth through the node
    return evaluate_reference(c, "b", x, t) * evaluate_reference(c, "rho", x, t);
}

// max |d_t rho - Laplacian rho + d_x (b rho)| with central differences (h, k).
double fokker_planck_residual(const CaseDefinition& c, double h, double k, Window w, double t) {
    auto rho = [&](double x, double s) { return evaluate_reference(c, "rho", x, s); };
    double err = 0.0;
    for (double x = w.lo; x <= w.hi + 1e-12; x += 0.05) {
        const double dt = (rho(x, t + k) - rho(x, t - k)) / (2.0 * k);
        const double lap = (rho(x + h, t) - 2.0 * rho(x, t) + rho(x - h, t)) / (h * h);
        const double flux = (b_rho(c, x + h, t) - b_rho(c, x - h, t)) / (2.0 * h);
        err = std::max(err, std::abs(dt - lap + flux));
    }
    return err;
}

Check make_check(const std::string& name, double value, double tol, bool at_least, const std::string& detail = {}) {
    Check c;
    c.name = name;
    c.value = value;
    c.tolerance = tol;
    c.relation = at_least ? ">=" : "<=";
    c.passed = std::isfinite(value) && (at_least ? value >= tol : value <= tol);
    c.detail = detail;
    return c;
}

Check strict_positive(const std::string& name, double value, const std::string& detail = {}) {
    Check c;
    c.name = name;
    c.value = value;
    c.tolerance = 0.0;
    c.relation = ">";
    c.passed = value > 0.0;
    c.detail = detail;
    return c;
}

// Gauge of stable_node f, g under the Gaussian-case potential: that potential
// exceeds the nodal one by 2/(1+t^2), which rescales f by e^{-2 atan t}.
double nodal_gauge(double t) { return std::exp(-2.0 * std::atan(t)); }

// Per-resolution data of the nodal diagnostic.
struct Resolution {
    Grid grid;
    std::vector<double> propagated;
    std::vector<double> target;
};

Resolution propagate_case_f(const CaseDefinition& c, double x_max, std::size_t n, double T) {
    Grid grid(-x_max, x_max, n);
    const auto spec = PotentialSpec::gaussian_case();
    const std::size_t pad = default_padding(grid, 0.0, T);
    const Grid wide = padded_grid(grid, pad);
    std::vector<double> f0(wide.size());
    for (std::size_t i = 0; i < wide.size(); ++i) f0[i] = evaluate_reference(c, "f", wide.node(i), 0.0);
    auto u = propagate_forward(spec, wide, f0, 0.0, T, suggested_steps(spec, wide, 0.0, T));
    Resolution r{grid, std::vector<double>(u.begin() + static_cast<std::ptrdiff_t>(pad),
                                           u.begin() + static_cast<std::ptrdiff_t>(pad + n)),
                 std::vector<double>(n)};
    const double gauge = c.name == "stable_node" ? nodal_gauge(T) : 1.0;
    for (std::size_t i = 0; i < n; ++i) r.target[i] = gauge * evaluate_reference(c, "f", grid.node(i), T);
    return r;
}

// (v(h) - 2 v(0) + v(-h)) / h at the middle node.
double jump_witness(const Grid& g, const std::vector<double>& v) {
    const std::size_t m = (g.size() - 1) / 2;
    return (v[m + 1] - 2.0 * v[m] + v[m - 1]) / g.spacing();
}

void check_nodal_case(const CaseDefinition& c) {
    if (c.name != "stable_node" && c.name != "gaussian_spread")
        throw std::invalid_argument("nodal_contradiction_diagnostic: case must be stable_node or gaussian_spread");
}

}  // namespace

bool CaseDefinition::advertises(const std::string& q) const {
    return std::find(quantities.begin(), quantities.end(), q) != quantities.end();
}

std::vector<std::string> case_names() {
    return {"gaussian_spread", "stable_node", "harmonic", "centrifugal", "moving_node"};
}

CaseDefinition make_case(const std::string& name, double gamma, double alpha) {
    if (name == "gaussian_spread" || name == "gaussian")
        return {"gaussian_spread", PotentialSpec::gaussian_case(), TimeGrid(0.0, 1.0, 5),
                {"rho", "f", "g", "b", "c", "v", "R", "S"}, {{-8.0, 8.0}}, {}, 0.0, 0.0};
    if (name == "stable_node")
        return {"stable_node", PotentialSpec::nodal_case(), TimeGrid(0.0, 1.0, 5),
                {"rho", "f", "g", "b", "c", "v", "R", "S"}, {{-8.0, 0.0}, {0.0, 8.0}}, {0.0}, 0.0, 0.0};
    if (name == "harmonic")
        return {"harmonic", PotentialSpec::harmonic(), TimeGrid(0.0, 1.0, 5),
                {"rho", "f", "g", "b", "c", "v", "R", "S", "ground_state", "eigenvalue"}, {{-8.0, 8.0}}, {}, 0.0, 0.0};
    if (name == "centrifugal")
        return {"centrifugal", PotentialSpec::centrifugal(gamma), TimeGrid(0.0, 1.0, 5),
                {"rho", "f", "g", "b", "c", "v", "ground_state", "eigenvalue"}, {{-8.0, 0.0}, {0.0, 8.0}},
                {0.0}, gamma, 0.0};
    if (name == "moving_node") {
        if (!(alpha >= 0.0)) throw std::invalid_argument("moving_node: alpha must be >= 0");
        // the bridge window starts after the node-forming instant
        // rho spreads to a = 1 + 1.5^2 by the window end, hence the wider domain
        return {"moving_node", PotentialSpec::moving_node(alpha), TimeGrid(alpha + 0.5, alpha + 1.5, 5),
                {"rho", "c", "eigenvalue"}, {{-12.0, 12.0}}, {}, 1.0, alpha};
    }
    throw std::invalid_argument("unknown case: " + name);
}

double evaluate_reference(const CaseDefinition& c, const std::string& q, double x, double t) {
    if (!c.advertises(q)) throw std::invalid_argument(c.name + " does not provide " + q);
    if (q == "eigenvalue") {
        const int n = level_of(x);
        if (c.name == "harmonic") return 2.0 * n + 1.0;
        if (c.name == "centrifugal") return 4.0 * n + centrifugal_ground_energy(c.gamma);
        return dimensional_centrifugal_energy(0.5, 1.0, n);  // moving node, m = 1/2, gamma = 1
    }
    if (c.name == "gaussian_spread") return gaussian_ref(q, x, t);
    if (c.name == "stable_node") return stable_node_ref(q, x, t);
    if (c.name == "harmonic") return harmonic_ref(q, x, t);
    if (c.name == "centrifugal") return centrifugal_ref(c.gamma, q, x, t);
    return moving_node_ref(c.alpha, q, x, t);
}

Profile sample_reference(const CaseDefinition& c, const std::string& q, const Grid& grid, double t) {
    return sample(grid, [&](double x) { return evaluate_reference(c, q, x, t); }, t);
}

bool DiagnosticReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::optional<std::string> DiagnosticReport::first_failure() const {
    for (const auto& c : checks)
        if (!c.passed) return c.name;
    return std::nullopt;
}

void DiagnosticReport::add(const std::string& n, double value, double tol, bool at_least, const std::string& detail) {
    checks.push_back(make_check(n, value, tol, at_least, detail));
}

void DiagnosticReport::merge(const DiagnosticReport& other, const std::string& prefix) {
    for (auto c : other.checks) {
        c.name = prefix + c.name;
        checks.push_back(std::move(c));
    }
    if (!other.data.empty()) data[prefix.empty() ? other.name : prefix] = other.data;
    if (!other.verdict.empty()) data[(prefix.empty() ? other.name : prefix) + "verdict"] = other.verdict;
}

nlohmann::json to_json(const DiagnosticReport& r) {
    nlohmann::json j;
    j["name"] = r.name;
    j["passed"] = r.passed();
    if (!r.verdict.empty()) j["verdict"] = r.verdict;
    auto failing = r.first_failure();
    j["first_failure"] = failing ? nlohmann::json(*failing) : nlohmann::json(nullptr);
    j["checks"] = nlohmann::json::array();
    for (const auto& c : r.checks) {
        nlohmann::json e{{"name", c.name}, {"passed", c.passed}, {"value", c.value},
                         {"tolerance", c.tolerance}, {"relation", c.relation}};
        if (!c.detail.empty()) e["detail"] = c.detail;
        j["checks"].push_back(std::move(e));
    }
    j["data"] = r.data;
    return j;
}

DiagnosticReport nodal_contradiction_diagnostic(const CaseDefinition& c, double T, const NodalDiagnosticOptions& opt) {
    check_nodal_case(c);
    if (!(T > 0.0)) throw std::invalid_argument("nodal_contradiction_diagnostic: T must be positive");
    if (opt.resolutions.size() < 2) throw std::invalid_argument("nodal_contradiction_diagnostic: need two resolutions");
    for (std::size_t k = 0; k < opt.resolutions.size(); ++k) {
        if (opt.resolutions[k] % 2 == 0 || opt.resolutions[k] < 5)
            throw std::invalid_argument("nodal_contradiction_diagnostic: resolutions must be odd (node at x = 0)");
        if (k > 0 && opt.resolutions[k] != 2 * opt.resolutions[k - 1] - 1)
            throw std::invalid_argument("nodal_contradiction_diagnostic: resolutions must halve the spacing");
    }

    std::vector<Resolution> runs;
    for (std::size_t n : opt.resolutions) runs.push_back(propagate_case_f(c, opt.x_max, n, T));

    DiagnosticReport rep;
    rep.name = "nodal_contradiction_diagnostic";
    nlohmann::json series = nlohmann::json::array();
    std::vector<double> jf, ju, sup_r;
    for (const auto& r : runs) {
        double s = 0.0;
        for (std::size_t i = 0; i < r.grid.size(); ++i)
            if (std::abs(r.grid.node(i)) <= opt.window) s = std::max(s, std::abs(r.propagated[i] - r.target[i]));
        jf.push_back(jump_witness(r.grid, r.target));
        ju.push_back(jump_witness(r.grid, r.propagated));
        sup_r.push_back(s);
        series.push_back({{"n", r.grid.size()}, {"h", r.grid.spacing()}, {"f_jump", jf.back()},
                          {"propagated_jump", ju.back()},
                          {"propagated_second_difference", ju.back() / r.grid.spacing()}, {"sup_residual", s}});
    }
    // Richardson estimate of the finest propagation error (second order)
    const auto& fine = runs.back();
    const auto& mid = runs[runs.size() - 2];
    double quad = 0.0;
    for (std::size_t i = 0; i < mid.grid.size(); ++i)
        if (std::abs(mid.grid.node(i)) <= opt.window)
            quad = std::max(quad, std::abs(fine.propagated[2 * i] - mid.propagated[i]) / 3.0);
    rep.data["resolutions"] = series;
    rep.data["quadrature_error_estimate"] = quad;

    const std::size_t L = jf.size() - 1;
    const double jf_change = std::abs(jf[L] - jf[L - 1]);
    const double ju_limit = std::abs(2.0 * ju[L] - ju[L - 1]);
    double d2_min = kInf, d2_max = 0.0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const double d2 = std::abs(ju[k] / runs[k].grid.spacing());
        d2_min = std::min(d2_min, d2);
        d2_max = std::max(d2_max, d2);
    }
    const bool f_jump = std::abs(jf[L]) >= 10.0 * jf_change && std::abs(jf[L]) > 0.0;
    const bool u_vanishes = ju_limit <= 0.05 * std::abs(jf[L]) && d2_max <= 1.5 * d2_min;
    const bool residual_large = sup_r[L] >= 10.0 * quad;
    const bool contradiction = f_jump && u_vanishes && residual_large;
    rep.verdict = contradiction ? "kernel inappropriate for nodal data" : "no contradiction";
    rep.data["f_jump_limit"] = jf[L];
    rep.data["propagated_jump_limit"] = 2.0 * ju[L] - ju[L - 1];

    if (c.name == "stable_node") {
        rep.add("f_jump_nonzero_under_refinement", std::abs(jf[L]), 10.0 * jf_change, true,
                "jump of f(.,T) first differences at 0 vs 10x its last refinement change");
        rep.add("propagated_jump_vanishes", ju_limit, 0.05 * std::abs(jf[L]), false,
                "extrapolated propagated jump vs 5% of the f jump");
        rep.add("propagated_second_difference_bounded", d2_max / std::max(d2_min, 1e-300), 1.5, false,
                "max/min of |second difference at 0| over resolutions");
        rep.add("residual_exceeds_quadrature_error", sup_r[L], 10.0 * quad, true,
                "sup |K f0 - f(.,T)| near 0 vs 10x Richardson error");
        rep.add("contradiction_found", contradiction ? 1.0 : 0.0, 1.0, true);
    } else {
        rep.add("residual_within_quadrature_error", sup_r[L], 10.0 * quad + 1e-12, false,
                "sup |K f0 - f(.,T)| near 0 vs 10x Richardson error");
        rep.add("no_contradiction", contradiction ? 1.0 : 0.0, 0.0, false);
    }
    return rep;
}

DiagnosticReport nodal_contradiction_diagnostic(double T, const NodalDiagnosticOptions& opt) {
    return nodal_contradiction_diagnostic(make_case("stable_node"), T, opt);
}

DiagnosticReport nodal_contradiction_diagnostic(const KernelMatrix& k, const CaseDefinition& c) {
    check_nodal_case(c);
    const Grid& g = k.grid;
    if (g.size() % 2 == 0 || std::abs(g.x_min() + g.x_max()) > 1e-12 * g.x_max())
        throw std::invalid_argument("nodal_contradiction_diagnostic: grid must be symmetric with a node at 0");
    if (!(k.min_entry() > 0.0))
        throw IncompatibleDataError("nodal_contradiction_diagnostic: kernel is not strictly positive");
    auto f0 = sample_reference(c, "f", g, k.s);
    auto u = k.apply_transpose(f0.values);
    const double gauge = c.name == "stable_node" ? nodal_gauge(k.t) / nodal_gauge(k.s) : 1.0;
    std::vector<double> target(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) target[i] = gauge * evaluate_reference(c, "f", g.node(i), k.t);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (std::abs(g.node(i)) <= 0.5) s = std::max(s, std::abs(u[i] - target[i]));
    const double jf = jump_witness(g, target), ju = jump_witness(g, u);
    DiagnosticReport rep;
    rep.name = "nodal_contradiction_diagnostic";
    rep.data = {{"f_jump", jf}, {"propagated_jump", ju}, {"sup_residual", s}};
    const bool contradiction = std::abs(ju) <= 0.1 * std::abs(jf);
    rep.verdict = contradiction ? "kernel inappropriate for nodal data" : "no contradiction";
    if (c.name == "stable_node") rep.add("propagated_jump_small", std::abs(ju), 0.1 * std::abs(jf));
    return rep;
}

DiagnosticReport degeneracy_block_check(double gamma, double tau, const Grid& grid, const McOptions& mc) {
    if (!(gamma > -0.125)) throw std::invalid_argument("degeneracy_block_check: gamma must exceed -1/8");
    if (!(grid.x_min() > 0.0)) throw std::invalid_argument("degeneracy_block_check: grid must lie in (0, inf)");
    if (!(tau > 0.0)) throw std::invalid_argument("degeneracy_block_check: tau must be positive");
    DiagnosticReport rep;
    rep.name = "degeneracy_block_check";
    const double p = centrifugal_power(gamma);
    const double E0 = centrifugal_ground_energy(gamma);
    const double res = eigen_residual(
        grid, [p](double x) { return std::pow(x, p) * std::exp(-0.5 * x * x); },
        [gamma](double x) { return x * x + 2.0 * gamma / (x * x); }, E0);
    rep.data["E0"] = E0;
    rep.data["ground_state_power"] = p;
    rep.add("ground_state_residual", res, 1e-3, false, "relative L2 residual of (-D2 + x^2 + 2 gamma/x^2 - E0) g0");
    if (gamma < 0.0) {
        rep.verdict = "eigen residual only (potential unbounded below for gamma < 0)";
        return rep;
    }
    const auto spec = PotentialSpec::centrifugal(gamma);
    McOptions o = mc;
    const auto cross = mc_kernel_estimate(spec, -1.0, 1.0, 0.0, tau, o);
    const auto same = mc_kernel_estimate(spec, 0.5, 1.0, 0.0, tau, o);
    rep.data["cross"] = {{"mean", cross.mean}, {"std_error", cross.std_error}, {"excluded", cross.n_excluded}};
    rep.data["same"] = {{"mean", same.mean}, {"std_error", same.std_error}, {"excluded", same.n_excluded}};
    const bool cross_zero = std::abs(cross.mean) <= 3.0 * cross.std_error;
    const bool same_positive = same.mean >= 5.0 * same.std_error && same.mean > 0.0;
    rep.verdict = cross_zero && same_positive ? "block-diagonal" : "not block-diagonal";
    rep.add("same_half_line_positive", same.mean, 5.0 * same.std_error, true, "mean vs 5 standard errors");
    if (gamma > 0.0) {
        rep.add("cross_half_line_zero", std::abs(cross.mean), 3.0 * cross.std_error, false, "|mean| vs 3 standard errors");
    } else {
        rep.add("cross_half_line_positive_without_singularity", cross.mean, 5.0 * cross.std_error, true,
                "gamma = 0 control");
    }
    return rep;
}

DiagnosticReport moving_node_consistency(double alpha, const Grid& grid) {
    if (!(alpha >= 0.0)) throw std::invalid_argument("moving_node_consistency: alpha must be >= 0");
    const auto c = make_case("moving_node", 1.0, alpha);
    DiagnosticReport rep;
    rep.name = "moving_node_consistency";

    // (i) unique zero at (0, alpha)
    rep.add("rho_zero_at_node", std::abs(evaluate_reference(c, "rho", 0.0, alpha)), 0.0);
    double min_other = kInf;
    for (double dt : {-0.5, -0.25, -0.1, 0.1, 0.25, 0.5})
        for (std::size_t i = 0; i < grid.size(); ++i)
            min_other = std::min(min_other, evaluate_reference(c, "rho", grid.node(i), alpha + dt));
    for (double dt : {-0.5, 0.5}) min_other = std::min(min_other, evaluate_reference(c, "rho", 0.0, alpha + dt));
    rep.add(strict_positive("rho_positive_off_node_time", min_other, "min over grid at t = alpha +- {0.1, 0.25, 0.5}"));
    double min_same = kInf;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid.node(i) != 0.0) min_same = std::min(min_same, evaluate_reference(c, "rho", grid.node(i), alpha));
    rep.add(strict_positive("rho_positive_off_node_point", min_same, "min over grid x != 0 at t = alpha"));

    // (ii) quantum potential at t = alpha against x^2/4 + 2/x^2 - 5/2
    auto limit = [](double x) { return 0.25 * x * x + 2.0 / (x * x) - 2.5; };
    const double x_max = std::max(std::abs(grid.x_min()), std::abs(grid.x_max()));
    const double h0 = grid.spacing();
    const auto n0 = static_cast<std::size_t>(std::llround((x_max - 0.25) / h0)) + 1;
    std::vector<double> errs;
    nlohmann::json series = nlohmann::json::array();
    for (int level = 0; level < 3; ++level) {
        const std::size_t n = (n0 - 1) * (std::size_t{1} << level) + 1;
        double e = 0.0;
        for (int side : {-1, 1}) {
            const Grid comp = side > 0 ? Grid(0.25, x_max, n) : Grid(-x_max, -0.25, n);
            auto q = quantum_potential_from_density(sample_reference(c, "rho", comp, alpha));
            for (std::size_t i = 0; i < n; ++i) {
                const double x = comp.node(i);
                if (std::abs(x) >= 0.5 && std::abs(x) <= 6.0) e = std::max(e, std::abs(q[i] - limit(x)));
            }
        }
        errs.push_back(e);
        series.push_back({{"h", (x_max - 0.25) / static_cast<double>(n - 1)}, {"max_error", e}});
    }
    rep.data["quantum_potential_refinement"] = series;
    rep.add("quantum_potential_order", order_of(errs[1], errs[2]), 1.8, true, "log2 of the error ratio, finest pair");
    rep.add("quantum_potential_error", errs[2], 1e-3, false, "finest max error on 0.5 <= |x| <= 6");
    double eval_err = 0.0;
    const auto spec = PotentialSpec::moving_node(alpha);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double x = grid.node(i);
        if (std::abs(x) >= 0.5) eval_err = std::max(eval_err, std::abs(evaluate_potential(spec, x, alpha) - limit(x)) / (1.0 + std::abs(limit(x))));
    }
    rep.add("potential_evaluator_limit", eval_err, 1e-12, false, "closed-form c at t = alpha vs the limit form");

    // (iii) E = 5/2 = 2 E0 with m = 1/2, gamma = 1
    const double E0 = dimensional_centrifugal_energy(0.5, 1.0, 0);
    rep.data["E0_dimensional"] = E0;
    rep.add("energy_identity", std::abs(2.0 * E0 - 2.5), 0.0, false, "2 E0 (m = 1/2, gamma = 1) vs 5/2, exact");
    return rep;
}

DiagnosticReport closed_form_checks(const CaseDefinition& c) {
    DiagnosticReport rep;
    rep.name = "closed_form_checks";
    const Grid grid(-6.0, 6.0, 241);
    const auto times = c.window.times();
    const bool has_fg = c.advertises("f") && c.advertises("g");

    if (has_fg) {
        double worst = 0.0;
        for (double t : times)
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double x = grid.node(i);
                const double r = evaluate_reference(c, "rho", x, t);
                const double fg = evaluate_reference(c, "f", x, t) * evaluate_reference(c, "g", x, t);
                if (r > 0.0) worst = std::max(worst, std::abs(fg - r) / r);
                else worst = std::max(worst, std::abs(fg));
            }
        rep.add("factorization", worst, 1e-13, false, "max relative |f g - rho|");
    }
    if (c.advertises("b") && c.advertises("g")) {
        const Window w{-5.0, 5.0};
        const double t = times[times.size() / 2];
        const double e1 = drift_identity_error(c, 2e-3, t, w, 0.5);
        const double e2 = drift_identity_error(c, 1e-3, t, w, 0.5);
        rep.data["drift_identity_errors"] = {e1, e2};
        rep.add("drift_identity", e2, 1e-4, false, "max |2 d/dx ln g - b|, h = 1e-3");
        // an exact identity leaves only rounding, with no order to measure
        if (e1 > 1e-9) rep.add("drift_identity_order", order_of(e1, e2), 1.8, true);
    }
    if (c.advertises("b") && c.name != "centrifugal") {
        const Window w{-4.0, 4.0};
        const double t = times[times.size() / 2];
        const double e1 = fokker_planck_residual(c, 1e-2, 1e-2, w, t);
        const double e2 = fokker_planck_residual(c, 5e-3, 5e-3, w, t);
        rep.data["fokker_planck_residuals"] = {e1, e2};
        rep.add("fokker_planck_residual", e2, 1e-4, false, "max discrete residual, h = dt = 5e-3");
        if (e1 > 1e-9) rep.add("fokker_planck_order", order_of(e1, e2), 1.8, true);
    }
    if (c.name == "centrifugal") {
        // stationary: d/dx (rho' - b rho) = 0, checked as Laplacian rho = d/dx(b rho) off the node
        double e = 0.0;
        const double h = 5e-3;
        for (double x = 0.5; x <= 4.0; x += 0.05) {
            auto rho = [&](double y) { return evaluate_reference(c, "rho", y, 0.0); };
            const double lap = (rho(x + h) - 2.0 * rho(x) + rho(x - h)) / (h * h);
            const double flux = (b_rho(c, x + h, 0.0) - b_rho(c, x - h, 0.0)) / (2.0 * h);
            e = std::max(e, std::abs(lap - flux));
        }
        rep.add("stationary_fokker_planck_residual", e, 1e-4, false);
        const Grid half(8.0 / 800.0, 8.0, 801);
        const double p = centrifugal_power(c.gamma);
        const double E0 = evaluate_reference(c, "eigenvalue", 0, 0);
        const double g = c.gamma;
        rep.add("ground_state_residual",
                eigen_residual(half, [p](double x) { return std::pow(x, p) * std::exp(-0.5 * x * x); },
                               [g](double x) { return x * x + 2.0 * g / (x * x); }, E0),
                1e-3);
        rep.add("eigenvalue_ladder", std::abs(evaluate_reference(c, "eigenvalue", 1, 0) - E0 - 4.0), 0.0);
    }
    if (c.name == "harmonic") {
        const Grid fine(-8.0, 8.0, 1601);
        for (int n : {0, 1}) {
            const double r = eigen_residual(
                fine, [n](double x) { return hermite_state(n, x); }, [](double x) { return x * x; },
                evaluate_reference(c, "eigenvalue", n, 0));
            rep.add("eigen_residual_n" + std::to_string(n), r, 1e-3, false, "relative L2, h = 0.01");
        }
    }
    if (c.advertises("R") && c.advertises("S")) {
        double worst = 0.0;
        for (double t : times)
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double x = grid.node(i);
                if (x == 0.0 && !c.nodes.empty()) continue;
                const double R = evaluate_reference(c, "R", x, t), S = evaluate_reference(c, "S", x, t);
                const double g = evaluate_reference(c, "g", x, t), f = evaluate_reference(c, "f", x, t);
                worst = std::max(worst, std::abs(std::exp(R + S) - g) / g);
                worst = std::max(worst, std::abs(std::exp(R - S) - f) / f);
            }
        rep.add("madelung_split", worst, 1e-12, false, "g = e^{R+S}, f = e^{R-S}");
    }
    if (c.name == "stable_node") {
        rep.add("velocity_at_2_1", std::abs(evaluate_reference(c, "v", 2.0, 1.0) - 1.0), 1e-15);
        rep.add("no_current_at_node", std::abs(evaluate_reference(c, "v", 0.0, 0.7)), 0.0);
        // the step-function factor: g(-x)/g(x) = e^{pi}
        const double ratio = evaluate_reference(c, "g", -1.3, 0.4) / evaluate_reference(c, "g", 1.3, 0.4);
        rep.add("phase_step_factor", std::abs(ratio / std::exp(kPi) - 1.0), 1e-14);
    }
    if (c.name == "moving_node") {
        // c is the quantum potential of rho at a time without a node
        const double t = c.window.t0();
        const Grid g(-6.0, 6.0, 1201);
        auto q = quantum_potential_from_density(sample_reference(c, "rho", g, t));
        double e = 0.0;
        for (std::size_t i = 1; i + 1 < g.size(); ++i)
            e = std::max(e, std::abs(q[i] - evaluate_reference(c, "c", g.node(i), t)));
        rep.add("potential_is_quantum_potential", e, 1e-3, false, "h = 0.01, t = window start");
        double mass = 0.0;
        for (double tt : {c.alpha - 0.7, c.alpha, c.alpha + 0.3, c.alpha + 1.5}) {
            const Grid wide(-20.0, 20.0, 8001);
            mass = std::max(mass, std::abs(integrate(sample_reference(c, "rho", wide, tt)) - 1.0));
        }
        rep.add("normalization", mass, 1e-9, false, "|int rho - 1| at several times");
    }
    return rep;
}

DiagnosticReport property_suite(const CaseDefinition& c, const PropertySuiteOptions& opt) {
    DiagnosticReport rep;
    rep.name = "property_suite";
    const auto times = c.window.times();
    TimeGrid tg(c.window.t0(), c.window.t1(), opt.slices);
    const auto slice_times = tg.times();

    for (const auto& comp : c.domain_components) {
        const bool node_left = std::find(c.nodes.begin(), c.nodes.end(), comp.first) != c.nodes.end();
        const bool node_right = std::find(c.nodes.begin(), c.nodes.end(), comp.second) != c.nodes.end();
        const std::string prefix = c.domain_components.size() > 1 ? (node_left ? "right/" : "left/") : "";
        // the ghost node one spacing beyond the grid end sits on the density node
        const double span = comp.second - comp.first;
        const double h = span / static_cast<double>(opt.nodes_per_component - 1 + (node_left || node_right ? 1 : 0));
        const Grid grid(node_left ? comp.first + h : comp.first, node_right ? comp.second - h : comp.second,
                        opt.nodes_per_component);

        auto sweep = assemble_padded_sweep(c.potential, grid, slice_times, !node_left, !node_right);
        auto rho0 = normalize(sample_reference(c, "rho", grid, tg.t0()));
        auto rhoT = normalize(sample_reference(c, "rho", grid, tg.t1()));
        auto prob = make_bridge_problem(rho0, rhoT, std::move(sweep));
        BridgeOptions bo;
        bo.tol = opt.tol;
        BridgeSolution sol = solve_schrodinger_system(prob, bo);
        rep.add(prefix + "converged", sol.marginal_residual, opt.tol, false, std::to_string(sol.iterations) + " iterations");

        double worst_mass = 0.0, worst_l1 = 0.0;
        for (std::size_t k = 0; k < sol.rho.size(); ++k) {
            worst_mass = std::max(worst_mass, std::abs(integrate(sol.rho[k]) - 1.0));
            auto ref = normalize(sample_reference(c, "rho", grid, sol.times[k]));
            worst_l1 = std::max(worst_l1, l1_distance(sol.rho[k], ref));
        }
        rep.add(prefix + "mass_conservation", worst_mass, 1e-6, false, "max |int rho - 1| over slices");
        if (c.name == "moving_node") {
            // its closed-form rho comes from a quantum evolution, not from this bridge
            rep.data[prefix + "closed_form_l1_informational"] = worst_l1;
        } else {
            rep.add(prefix + "reference_density", worst_l1, 5e-3, false, "max L1 to the closed-form density over slices");
        }

        // gauge covariance: f -> lambda f, g -> g / lambda changes nothing observable
        const double lam = 3.7;
        auto scaled = [](const Profile& p, double a) {
            auto v = p.values;
            for (double& x : v) x *= a;
            return Profile(p.grid, std::move(v), p.time);
        };
        auto f2 = scaled(sol.f, lam), g2 = scaled(sol.g, 1.0 / lam);
        auto m1 = joint_density(prob.kernel_0T, sol.f, sol.g);
        auto m2 = joint_density(prob.kernel_0T, f2, g2);
        double gauge_err = 0.0, peak = max_abs(m1);
        for (std::size_t e = 0; e < m1.size(); ++e) gauge_err = std::max(gauge_err, std::abs(m1[e] - m2[e]) / peak);
        for (std::size_t k = 0; k < sol.times.size(); ++k) {
            const KernelMatrix* a = prob.from_start[k] ? &*prob.from_start[k] : nullptr;
            const KernelMatrix* b = prob.to_end[k] ? &*prob.to_end[k] : nullptr;
            auto [th, ths] = propagate_theta(f2, g2, sol.times[k], a, b);
            const double rp = max_abs(sol.rho[k].values);
            for (std::size_t i = 0; i < th.size(); ++i)
                gauge_err = std::max(gauge_err, std::abs(th[i] * ths[i] - sol.rho[k][i]) / rp);
        }
        rep.add(prefix + "gauge_covariance", gauge_err, 1e-12, false, "relative change of joint density and rho slices");

        // Markov composition through the middle slice, away from padded edges
        const std::size_t mid = sol.times.size() / 2, last = sol.times.size() - 1;
        const double q = 0.25 * (grid.x_max() - grid.x_min());
        const double lo = node_left ? grid.x_min() : grid.x_min() + q;
        const double hi = node_right ? grid.x_max() : grid.x_max() - q;
        TransitionOptions to;
        to.check_window = std::pair{lo, hi};
        to.row_tol = 1e-3;
        auto p0m = transition_density(*prob.from_start[mid], sol.theta[mid], sol.theta[0], to);
        auto pmT = transition_density(*prob.to_end[mid], sol.theta[last], sol.theta[mid], to);
        auto p0T = transition_density(prob.kernel_0T, sol.theta[last], sol.theta[0], to);
        auto comp_p = compose(p0m, pmT);
        double ck = 0.0, ckpeak = 0.0;
        const double inner_lo = lo + (node_left ? 0.0 : 0.5 * q), inner_hi = hi - (node_right ? 0.0 : 0.5 * q);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (grid.node(i) < inner_lo || grid.node(i) > inner_hi) continue;
            for (std::size_t j = 0; j < grid.size(); ++j) {
                if (grid.node(j) < inner_lo || grid.node(j) > inner_hi) continue;
                ck = std::max(ck, std::abs(comp_p(i, j) - p0T(i, j)));
                ckpeak = std::max(ckpeak, p0T(i, j));
            }
        }
        rep.add(prefix + "markov_composition", ck / ckpeak, 1e-6, false, "relative sup over interior rows and columns");

        // seed determinism across worker counts
        SimulationOptions so;
        so.n_paths = 2000;
        so.record = TimeGrid(tg.t0(), tg.t1(), 3);
        so.dt = (tg.t1() - tg.t0()) / 200.0;
        so.seed = opt.seed;
        so.domain = {grid.x_min() - (node_left ? grid.spacing() : 0.0), grid.x_max() + (node_right ? grid.spacing() : 0.0)};
        if (node_left) so.nodes.push_back(comp.first);
        if (node_right) so.nodes.push_back(comp.second);
        DriftField drift(sol.drift);
        McOptions mo;
        mo.n_paths = 2000;
        mo.n_time = 50;
        mo.seed = opt.seed;
        const double y = 0.5 * (lo + hi), x = y + 0.1;
        const auto before = worker_count();
        set_worker_count(1);
        auto e1 = simulate_paths(drift, rho0, so);
        auto k1 = mc_kernel_estimate(c.potential, y, x, tg.t0(), tg.t1(), mo);
        set_worker_count(std::max<std::size_t>(before, 2) + 1);
        auto e2 = simulate_paths(drift, rho0, so);
        auto k2 = mc_kernel_estimate(c.potential, y, x, tg.t0(), tg.t1(), mo);
        set_worker_count(before);
        bool same = e1.positions.size() == e2.positions.size();
        for (std::size_t i = 0; same && i < e1.positions.size(); ++i) {
            const double a = e1.positions[i], b = e2.positions[i];
            same = (std::isnan(a) && std::isnan(b)) || a == b;
        }
        rep.add(prefix + "simulation_seed_determinism", same ? 0.0 : 1.0, 0.0, false, "1 vs several workers, bitwise");
        rep.add(prefix + "mc_seed_determinism", k1.mean == k2.mean && k1.std_error == k2.std_error ? 0.0 : 1.0, 0.0,
                false, "1 vs several workers, bitwise");
    }
    return rep;
}

DiagnosticReport validate_case(const CaseDefinition& c) {
    DiagnosticReport rep;
    rep.name = "validate/" + c.name;
    rep.merge(closed_form_checks(c), "closed_form/");
    if (c.name == "gaussian_spread") {
        rep.merge(nodal_contradiction_diagnostic(c, 1.0), "nodal_control/");
    } else if (c.name == "stable_node") {
        rep.merge(nodal_contradiction_diagnostic(c, 1.0), "nodal_contradiction/");
    } else if (c.name == "centrifugal") {
        McOptions mc;
        mc.n_paths = 100000;
        mc.n_time = 100;
        mc.seed = 2024;
        rep.merge(degeneracy_block_check(c.gamma, 0.5, Grid(0.01, 8.0, 801), mc), "degeneracy/");
    } else if (c.name == "moving_node") {
        rep.merge(moving_node_consistency(c.alpha, Grid(-8.0, 8.0, 401)), "moving_node/");
    }
    rep.merge(property_suite(c), "properties/");
    return rep;
}

}  // namespace fkbridge
