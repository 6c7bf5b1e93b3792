#include "fkbridge/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fkbridge/bridge.hpp"
#include "fkbridge/cases.hpp"
#include "fkbridge/diffusion.hpp"
#include "fkbridge/errors.hpp"
#include "fkbridge/kernel.hpp"
#include "fkbridge/parallel.hpp"
#include "fkbridge/potentials.hpp"

namespace fkbridge::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

/// Error reported with exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

/// Payload is deterministic; run-dependent facts live in metadata.
void write_json(const fs::path& path, const json& payload, const std::string& command) {
    json doc{{"payload", payload},
             {"metadata", {{"command", command}, {"timestamp", utc_timestamp()},
                           {"workers", worker_count()}, {"version", kVersion}}}};
    std::ofstream out(path);
    if (!out) throw UsageError("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot open " + path.string() + " for writing");
    out << text;
}

fs::path prepare_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir);
    return fs::path(dir);
}

PotentialSpec potential_from_name(const std::string& name, double gamma, double alpha) {
    if (name == "free") return PotentialSpec::free();
    if (name == "harmonic") return PotentialSpec::harmonic();
    if (name == "gaussian") return PotentialSpec::gaussian_case();
    if (name == "nodal") return PotentialSpec::nodal_case();
    if (name == "centrifugal") return PotentialSpec::centrifugal(gamma);
    if (name == "moving_node") return PotentialSpec::moving_node(alpha);
    throw UsageError("unknown potential '" + name + "'");
}

CaseDefinition case_from_name(const std::string& name, double gamma, double alpha) {
    try {
        return make_case(name, gamma, alpha);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

/// ||a f - ref|| / ||ref|| with the least-squares scale a.
double relative_l2_up_to_constant(const std::vector<double>& f, const std::vector<double>& ref) {
    double ff = 0.0, fr = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        ff += f[i] * f[i];
        fr += f[i] * ref[i];
        rr += ref[i] * ref[i];
    }
    const double a = fr / ff;
    double e = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) e += (a * f[i] - ref[i]) * (a * f[i] - ref[i]);
    return std::sqrt(e / rr);
}

/// One grid of a case: node-adjacent ends stop one spacing short of the node,
/// whose Dirichlet value then sits on the ghost node.
struct Component {
    std::string label;
    Grid grid;
    bool node_left = false;
    bool node_right = false;
    std::vector<double> nodes;
    std::pair<double, double> domain;
};

Component make_component(const std::string& label, double lo, double hi, std::size_t n, bool node_left,
                         bool node_right) {
    if (n < 3) throw UsageError("--nx must be >= 3");
    const double h = (hi - lo) / static_cast<double>(n - 1 + ((node_left || node_right) ? 1 : 0));
    Component c{label, Grid(node_left ? lo + h : lo, node_right ? hi - h : hi, n), node_left, node_right, {}, {lo, hi}};
    if (node_left) c.nodes.push_back(lo);
    if (node_right) c.nodes.push_back(hi);
    return c;
}

std::vector<Component> case_components(const CaseDefinition& c, std::size_t n, std::optional<std::pair<double, double>> range,
                                       const std::string& which) {
    std::vector<Component> out;
    auto is_node = [&](double x) { return std::find(c.nodes.begin(), c.nodes.end(), x) != c.nodes.end(); };
    for (const auto& [lo0, hi0] : c.domain_components) {
        const bool nl = is_node(lo0), nr = is_node(hi0);
        double lo = lo0, hi = hi0;
        if (range) {
            if (!nl) lo = range->first;
            if (!nr) hi = range->second;
        }
        if (!(hi > lo)) throw UsageError("empty domain component after applying --x-min/--x-max");
        const std::string label = c.domain_components.size() == 1 ? "" : (nl ? "right" : "left");
        if (which != "all" && which != label && !label.empty()) continue;
        out.push_back(make_component(label, lo, hi, n, nl, nr));
    }
    if (out.empty()) throw UsageError("--component must be all, left or right");
    return out;
}

KernelSweep analytic_sweep(const std::string& potential, const Grid& grid, const std::vector<double>& times) {
    auto make = [&](double s, double t) {
        if (potential == "free") return heat_kernel_matrix(grid, s, t);
        if (potential == "harmonic") return harmonic_kernel_matrix(grid, s, t);
        throw UsageError("--method analytic is available for the free and harmonic potentials only");
    };
    KernelSweep sw;
    sw.times = times;
    for (std::size_t k = 1; k < times.size(); ++k) sw.from_start.push_back(make(times.front(), times[k]));
    for (std::size_t k = 0; k + 1 < times.size(); ++k) sw.to_end.push_back(make(times[k], times.back()));
    return sw;
}

std::string potential_key(const PotentialSpec& spec) { return spec.name(); }

// ---------------------------------------------------------------- solve

struct SolveArgs {
    std::string case_name;
    std::string rho0_file, rhoT_file;
    std::string potential = "free";
    double gamma = 1.0, alpha = 0.0;
    double x_min = -8.0, x_max = 8.0;
    double t0 = 0.0, T = 1.0;
    std::size_t nx = 401, slices = 11, max_iter = 10000;
    double tol = 1e-10;
    std::string method = "pde";
    bool no_pad = false;
    std::string component = "all";
    std::string out = "fkbridge_out";
    bool t0_given = false, T_given = false, range_given = false;
};

json solve_component(const SolveArgs& a, const PotentialSpec& spec, const Component& comp, const Profile& rho0,
                     const Profile& rhoT, const CaseDefinition* c, const fs::path& dir, bool& converged,
                     std::ostream& log) {
    TimeGrid tg(rho0.time, rhoT.time, a.slices);
    const auto times = tg.times();
    KernelSweep sweep = a.method == "analytic"
                            ? analytic_sweep(a.potential, comp.grid, times)
                            : assemble_padded_sweep(spec, comp.grid, times, !a.no_pad && !comp.node_left,
                                                    !a.no_pad && !comp.node_right);
    auto prob = make_bridge_problem(rho0, rhoT, std::move(sweep));
    BridgeOptions bo;
    bo.tol = a.tol;
    bo.max_iter = a.max_iter;
    std::shared_ptr<const BridgeSolution> sol;
    try {
        sol = std::make_shared<BridgeSolution>(solve_schrodinger_system(prob, bo));
        converged = true;
    } catch (const ConvergenceError& e) {
        sol = std::make_shared<BridgeSolution>(e.partial());
        converged = false;
        log << "warning: " << e.what() << '\n';
    }
    fs::create_directories(dir);
    write_solution_slices(*sol, (dir / "slices").string());
    write_profile_csv((dir / "f.csv").string(), sol->f);
    write_profile_csv((dir / "g.csv").string(), sol->g);

    json j;
    j["component"] = comp.label.empty() ? "whole" : comp.label;
    j["grid"] = {{"x_min", comp.grid.x_min()}, {"x_max", comp.grid.x_max()}, {"n", comp.grid.size()}};
    j["domain"] = {comp.domain.first, comp.domain.second};
    j["nodes"] = comp.nodes;
    j["times"] = sol->times;
    j["converged"] = converged;
    j["residual"] = sol->marginal_residual;
    j["iterations"] = sol->iterations;
    j["gauge"] = sol->gauge;
    j["warnings"] = sol->warnings;
    j["clamped"] = prob.kernel_0T.clamped;
    std::vector<double> mass;
    for (const auto& r : sol->rho) mass.push_back(std::abs(integrate(r) - 1.0));
    j["mass_error"] = mass;
    if (c && c->advertises("rho") && c->name != "moving_node") {
        std::vector<double> l1;
        for (const auto& r : sol->rho) l1.push_back(l1_distance(r, normalize(sample_reference(*c, "rho", comp.grid, r.time))));
        j["rho_l1_to_reference"] = l1;
    }
    if (c && c->advertises("f") && c->advertises("g") && c->name != "stable_node") {
        j["f_rel_l2_up_to_constant"] =
            relative_l2_up_to_constant(sol->f.values, sample_reference(*c, "f", comp.grid, sol->f.time).values);
        j["g_rel_l2_up_to_constant"] =
            relative_l2_up_to_constant(sol->g.values, sample_reference(*c, "g", comp.grid, sol->g.time).values);
    }
    log << (comp.label.empty() ? "" : comp.label + ": ") << (converged ? "converged" : "not converged")
        << " residual=" << sol->marginal_residual << " iterations=" << sol->iterations << '\n';
    return j;
}

int cmd_solve(const SolveArgs& a, const std::string& config_echo, std::ostream& log) {
    if (!(a.tol > 0.0)) throw UsageError("--tol must be > 0");
    if (a.slices < 2) throw UsageError("--slices must be >= 2");
    if (a.method != "pde" && a.method != "analytic") throw UsageError("solve: --method must be pde or analytic");
    const fs::path out = prepare_dir(a.out);
    write_text(out / "config.ini", config_echo);

    json payload;
    bool all_converged = true;
    std::vector<json> parts;
    if (!a.case_name.empty()) {
        if (!a.rho0_file.empty() || !a.rhoT_file.empty()) throw UsageError("--case excludes --rho0/--rhoT");
        const auto c = case_from_name(a.case_name, a.gamma, a.alpha);
        if (a.method == "analytic") throw UsageError("solve --case uses --method pde");
        payload["case"] = c.name;
        payload["potential"] = potential_key(c.potential);
        std::optional<std::pair<double, double>> range;
        if (a.range_given) range = std::pair{a.x_min, a.x_max};
        const double t0 = a.t0_given ? a.t0 : c.window.t0();
        const double T = a.T_given ? a.T : c.window.t1();
        if (!(T > t0)) throw UsageError("--T must exceed the start time");
        for (const auto& comp : case_components(c, a.nx, range, a.component)) {
            auto rho0 = normalize(sample_reference(c, "rho", comp.grid, t0));
            auto rhoT = normalize(sample_reference(c, "rho", comp.grid, T));
            bool conv = false;
            const fs::path dir = comp.label.empty() ? out : out / comp.label;
            parts.push_back(solve_component(a, c.potential, comp, rho0, rhoT, &c, dir, conv, log));
            all_converged = all_converged && conv;
        }
    } else {
        if (a.rho0_file.empty() || a.rhoT_file.empty()) throw UsageError("solve needs --case or both --rho0 and --rhoT");
        Profile rho0 = read_profile_csv(a.rho0_file), rhoT = read_profile_csv(a.rhoT_file);
        if (!(rho0.grid == rhoT.grid)) throw UsageError("--rho0 and --rhoT use different grids");
        rho0 = normalize(Profile(rho0.grid, rho0.values, a.t0));
        rhoT = normalize(Profile(rhoT.grid, rhoT.values, a.T));
        if (!(a.T > a.t0)) throw UsageError("--T must exceed --t0");
        const auto spec = potential_from_name(a.potential, a.gamma, a.alpha);
        payload["potential"] = potential_key(spec);
        Component comp{"", rho0.grid, false, false, {}, {rho0.grid.x_min(), rho0.grid.x_max()}};
        bool conv = false;
        parts.push_back(solve_component(a, spec, comp, rho0, rhoT, nullptr, out, conv, log));
        all_converged = conv;
    }
    payload["method"] = a.method;
    payload["tol"] = a.tol;
    payload["components"] = parts;
    payload["converged"] = all_converged;
    write_json(out / "summary.json", payload, "solve");
    return all_converged ? kOk : kNotConverged;
}

// ---------------------------------------------------------------- kernel

struct KernelArgs {
    std::string potential = "free";
    double gamma = 1.0, alpha = 0.0;
    std::string method = "pde";
    double s = 0.0, tau = 0.5;
    std::size_t nx = 201, steps = 0;
    double x_min = -8.0, x_max = 8.0;
    std::size_t paths = 100000, substeps = 100;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double y = 0.0, x = 0.0;
    std::string scheme = "pinned";
    bool restrict_domain = false;
    std::string out = "fkbridge_kernel";
};

int cmd_kernel(const KernelArgs& a, const std::string& config_echo, std::ostream& log) {
    if (!(a.tau > 0.0)) throw UsageError("--tau must be > 0");
    const auto spec = potential_from_name(a.potential, a.gamma, a.alpha);
    const double t = a.s + a.tau;
    json payload{{"potential", potential_key(spec)}, {"method", a.method}, {"s", a.s}, {"t", t}};

    if (a.method == "mc") {
        if (!a.seed_given) throw UsageError("kernel --method mc requires --seed");
        McOptions mo;
        mo.n_paths = a.paths;
        mo.n_time = a.substeps;
        mo.seed = a.seed;
        if (a.scheme == "forward") mo.scheme = McScheme::ForwardLastStep;
        else if (a.scheme != "pinned") throw UsageError("--scheme must be pinned or forward");
        if (a.restrict_domain) mo.domain = std::pair{a.x_min, a.x_max};
        const auto est = mc_kernel_estimate(spec, a.y, a.x, a.s, t, mo);
        const fs::path out = prepare_dir(a.out);
        write_text(out / "config.ini", config_echo);
        payload.update({{"y", a.y}, {"x", a.x}, {"mean", est.mean}, {"std_error", est.std_error},
                        {"n_paths", est.n_paths}, {"n_excluded", est.n_excluded}, {"n_time", a.substeps},
                        {"seed", a.seed}, {"scheme", a.scheme}});
        std::ostringstream csv;
        csv << std::setprecision(17) << "y,x,s,t,mean,std_error,n_paths,n_excluded\n"
            << a.y << ',' << a.x << ',' << a.s << ',' << t << ',' << est.mean << ',' << est.std_error << ','
            << est.n_paths << ',' << est.n_excluded << '\n';
        write_text(out / "estimate.csv", csv.str());
        write_json(out / "estimate.json", payload, "kernel");
        log << "k(" << a.y << ", " << a.s << ", " << a.x << ", " << t << ") = " << est.mean << " +- " << est.std_error
            << '\n';
        return kOk;
    }

    const Grid grid(a.x_min, a.x_max, a.nx);
    const std::vector<double> times{a.s, a.s + 0.5 * a.tau, t};
    KernelSweep sw;
    if (a.method == "pde") {
        const std::size_t total = a.steps > 0 ? a.steps : suggested_steps(spec, grid, a.s, t);
        sw = assemble_kernel_sweep(spec, grid, times, (total + 1) / 2);
        payload["steps"] = 2 * ((total + 1) / 2);
    } else if (a.method == "analytic") {
        sw = analytic_sweep(a.potential, grid, times);
    } else {
        throw UsageError("--method must be pde, analytic or mc");
    }
    const KernelMatrix& k = sw.from_start[1];
    const double q = 0.25 * (a.x_max - a.x_min);
    const std::pair<double, double> window{a.x_min + q, a.x_max - q};
    const double ck = chapman_kolmogorov_residual(sw.from_start[0], sw.to_end[1], k, window);
    double peak = 0.0;
    for (double e : k.entries) peak = std::max(peak, e);
    const fs::path out = prepare_dir(a.out);
    write_text(out / "config.ini", config_echo);
    write_kernel_binary((out / "kernel.fkk").string(), k);
    payload.update({{"grid", {{"x_min", a.x_min}, {"x_max", a.x_max}, {"n", a.nx}}},
                    {"clamped", k.clamped},
                    {"min_entry", k.min_entry()},
                    {"chapman_kolmogorov", {{"midpoint", times[1]}, {"window", {window.first, window.second}},
                                            {"residual", ck}, {"relative_residual", ck / peak}}}});
    write_json(out / "report.json", payload, "kernel");
    log << "kernel written; Chapman-Kolmogorov residual " << ck << " (relative " << ck / peak << ")\n";
    return kOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string from_run, case_name;
    double gamma = 1.0, alpha = 0.0;
    std::size_t paths = 100000, record = 0, nx = 401;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    std::string out = "fkbridge_sim";
};

int cmd_simulate(const SimulateArgs& a, const std::string& config_echo, std::ostream& log) {
    if (a.from_run.empty() == a.case_name.empty()) throw UsageError("simulate needs exactly one of --from-run or --case");
    if (!(a.dt > 0.0)) throw UsageError("--dt must be > 0");
    if (a.paths == 0) throw UsageError("--paths must be >= 1");

    std::optional<DriftField> drift;
    std::optional<Profile> rho0;
    std::vector<Profile> reference;  // densities to compare against, by record slice
    SimulationOptions so;
    so.n_paths = a.paths;
    so.dt = a.dt;
    so.seed = a.seed;
    json payload;

    if (!a.from_run.empty()) {
        const fs::path run(a.from_run);
        if (!fs::is_directory(run / "slices"))
            throw UsageError("--from-run: no slices/ in " + a.from_run + " (for split domains pass the component directory)");
        auto stored = read_solution_slices((run / "slices").string());
        rho0 = stored.rho.front();
        const std::size_t m = a.record > 0 ? a.record : stored.times.size();
        so.record = TimeGrid(stored.times.front(), stored.times.back(), m);
        so.domain = {rho0->grid.x_min(), rho0->grid.x_max()};
        // a component summary names the nodes at its ends
        std::ifstream sj(run / "summary.json");
        if (!sj && fs::exists(run.parent_path() / "summary.json")) sj.open(run.parent_path() / "summary.json");
        if (sj) {
            const auto doc = json::parse(sj, nullptr, false);
            if (!doc.is_discarded() && doc.contains("payload")) {
                for (const auto& comp : doc["payload"].value("components", json::array())) {
                    if (comp["grid"]["x_min"].get<double>() != rho0->grid.x_min() ||
                        comp["grid"]["x_max"].get<double>() != rho0->grid.x_max())
                        continue;
                    so.nodes = comp["nodes"].get<std::vector<double>>();
                    so.domain = {comp["domain"][0].get<double>(), comp["domain"][1].get<double>()};
                }
            }
        }
        for (double t : so.record.times()) {
            auto it = std::find_if(stored.rho.begin(), stored.rho.end(),
                                   [t](const Profile& p) { return std::abs(p.time - t) <= 1e-12 * (1.0 + std::abs(t)); });
            reference.push_back(it != stored.rho.end() ? *it : Profile(rho0->grid, {}, t));
        }
        drift.emplace(std::move(stored.drift));
        payload["from_run"] = a.from_run;
    } else {
        const auto c = case_from_name(a.case_name, a.gamma, a.alpha);
        if (!c.advertises("b")) throw UsageError("case " + c.name + " has no closed-form drift");
        double lo = c.domain_components.front().first, hi = c.domain_components.back().second;
        const Grid grid(lo, hi, a.nx);
        rho0 = normalize(sample_reference(c, "rho", grid, c.window.t0()));
        so.record = TimeGrid(c.window.t0(), c.window.t1(), a.record > 0 ? a.record : 11);
        so.domain = {lo, hi};
        so.nodes = c.nodes;
        for (double t : so.record.times()) reference.push_back(normalize(sample_reference(c, "rho", grid, t)));
        drift.emplace([c](double x, double t) {
            for (double z : c.nodes)
                if (x == z) return 0.0;
            return evaluate_reference(c, "b", x, t);
        });
        payload["case"] = c.name;
    }

    const auto ens = simulate_paths(*drift, *rho0, so);
    const fs::path out = prepare_dir(a.out);
    write_text(out / "config.ini", config_echo);
    write_ensemble_binary((out / "ensemble.bin").string(), ens);
    write_summary_csv((out / "summary.csv").string(), ens);

    json slices = json::array();
    const auto stats = slice_statistics(ens);
    for (std::size_t k = 0; k < stats.size(); ++k) {
        json s{{"t", stats[k].t}, {"mean", stats[k].mean}, {"var", stats[k].var}, {"n_alive", stats[k].n_alive},
               {"n_absorbed", stats[k].n_absorbed}};
        if (!reference[k].values.empty() && stats[k].n_alive > 1)
            s["l1_to_reference"] = l1_distance(empirical_density(ens, stats[k].t, rho0->grid), reference[k]);
        slices.push_back(std::move(s));
    }
    payload.update({{"n_paths", ens.n_paths}, {"dt", a.dt}, {"seed", a.seed}, {"nodes", so.nodes},
                    {"domain", {so.domain.first, so.domain.second}}, {"n_absorbed", ens.n_absorbed},
                    {"n_flagged", ens.n_flagged}, {"slices", slices},
                    {"mean_T", stats.back().mean}, {"var_T", stats.back().var}});
    write_json(out / "summary.json", payload, "simulate");
    log << "simulated " << ens.n_paths << " paths; var(T) = " << stats.back().var << ", absorbed " << ens.n_absorbed
        << '\n';
    return kOk;
}

// ---------------------------------------------------------------- moments

struct MomentsArgs {
    std::string case_name = "gaussian_spread";
    double gamma = 1.0, alpha = 0.0;
    double x0 = 1.0, s = 0.0, eps = 0.5;
    std::vector<double> taus{0.01, 0.005, 0.0025};
    std::string method = "pde";
    std::size_t nx = 401, paths = 100000, record = 5;
    double dt = 1e-4;
    std::uint64_t seed = 0;
    std::string out = "fkbridge_moments";
};

int cmd_moments(const MomentsArgs& a, const std::string& config_echo, std::ostream& log) {
    const auto c = case_from_name(a.case_name, a.gamma, a.alpha);
    if (!c.advertises("g") || !c.advertises("b")) throw UsageError("case " + c.name + " has no closed-form g and b");
    const auto comps = case_components(c, a.nx, std::nullopt, "all");
    const Component* comp = nullptr;
    for (const auto& k : comps)
        if (a.x0 > k.domain.first && a.x0 < k.domain.second) comp = &k;
    if (!comp) throw UsageError("--x0 is not inside a domain component of " + c.name);

    MomentEstimates m;
    if (a.method == "pde") {
        auto g = sample_reference(c, "g", comp->grid, c.window.t1());
        auto p = short_time_transitions(c.potential, g, a.s, a.taus);
        m = estimate_moments(p, a.x0, a.s, a.eps);
    } else if (a.method == "paths") {
        double tmax = 0.0;
        for (double t : a.taus) tmax = std::max(tmax, t);
        SimulationOptions so;
        so.n_paths = a.paths;
        so.dt = a.dt;
        so.seed = a.seed;
        so.start_point = a.x0;
        so.record = TimeGrid(a.s, a.s + tmax, a.record);
        so.domain = comp->domain;
        so.nodes = comp->nodes;
        DriftField drift([c](double x, double t) { return x == 0.0 && !c.nodes.empty() ? 0.0 : evaluate_reference(c, "b", x, t); });
        const auto ens = simulate_paths(drift, sample_reference(c, "rho", comp->grid, a.s), so);
        m = estimate_moments(ens, a.x0, a.s, a.eps);
    } else {
        throw UsageError("--method must be pde or paths");
    }
    bool decreasing = true;
    std::vector<std::size_t> order(m.increments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return m.increments[i] > m.increments[j]; });
    for (std::size_t i = 1; i < order.size(); ++i)
        decreasing = decreasing && m.escape_by_increment[order[i]] < m.escape_by_increment[order[i - 1]];

    const fs::path out = prepare_dir(a.out);
    write_text(out / "config.ini", config_echo);
    json payload{{"case", c.name},
                 {"method", a.method},
                 {"x0", m.x0},
                 {"s", m.s},
                 {"epsilon", m.epsilon},
                 {"drift_hat", m.drift_hat},
                 {"drift_hat_se", m.drift_hat_se},
                 {"diffusion_hat", m.diffusion_hat},
                 {"diffusion_hat_se", m.diffusion_hat_se},
                 {"escape_rate", m.escape_rate},
                 {"escape_rate_se", m.escape_rate_se},
                 {"increments", m.increments},
                 {"escape_by_increment", m.escape_by_increment},
                 {"drift_by_increment", m.drift_by_increment},
                 {"diffusion_by_increment", m.diffusion_by_increment},
                 {"escape_decreasing", decreasing},
                 {"reference_drift", evaluate_reference(c, "b", a.x0, a.s)},
                 {"reference_diffusion", 2.0}};
    write_json(out / "moments.json", payload, "moments");
    log << "drift " << m.drift_hat << " (reference " << evaluate_reference(c, "b", a.x0, a.s) << "), diffusion "
        << m.diffusion_hat << " (reference 2)\n";
    return kOk;
}

// ---------------------------------------------------------------- validate

struct ValidateArgs {
    std::string case_name;
    double gamma = 1.0, alpha = 0.0;
    std::string out;
};

int cmd_validate(const ValidateArgs& a, const std::string& config_echo, std::ostream& log) {
    const auto c = case_from_name(a.case_name, a.gamma, a.alpha);
    const auto report = validate_case(c);
    for (const auto& ch : report.checks)
        log << (ch.passed ? "PASS " : "FAIL ") << ch.name << ": " << ch.value << ' ' << ch.relation << ' '
            << ch.tolerance << '\n';
    if (!a.out.empty()) {
        const fs::path out = prepare_dir(a.out);
        write_text(out / "config.ini", config_echo);
        write_json(out / "report.json", to_json(report), "validate");
    }
    if (!report.passed()) {
        log << "validation failed at " << *report.first_failure() << '\n';
        return kValidationFailed;
    }
    log << "all " << report.checks.size() << " checks passed\n";
    return kOk;
}

/// Resolved configuration of the global options and the active subcommand.
std::string echo_config(const std::string& full, const std::string& active) {
    std::istringstream in(full);
    std::ostringstream out;
    out << "# fkbridge " << kVersion << " resolved configuration; rerun with --config <this file> " << active << '\n';
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        const std::string key = line.substr(0, eq);
        const auto dot = key.find('.');
        const bool unset = eq != std::string::npos && line.substr(eq + 1) == "\"\"";
        if (!unset && (dot == std::string::npos || key.substr(0, dot) == active)) out << line << '\n';
    }
    return out.str();
}

/// FKBRIDGE_WORKERS wins over --workers; 0 keeps the machine default.
void apply_workers(std::size_t flag) {
    std::size_t n = flag;
    if (const char* env = std::getenv("FKBRIDGE_WORKERS"); env && *env) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (*end != '\0' || v == 0) throw UsageError("FKBRIDGE_WORKERS must be a positive integer");
        n = static_cast<std::size_t>(v);
    }
    if (n > 0) set_worker_count(n);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Schrodinger bridges, Feynman-Kac kernels and diffusion simulation in one dimension", "fkbridge"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "INI file with [solve], [kernel], ... sections of option = value");
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();
    std::size_t workers = 0;
    app.add_option("--workers", workers, "Worker threads (0 = machine parallelism; FKBRIDGE_WORKERS overrides)");

    SolveArgs sa;
    auto* solve = app.add_subcommand("solve", "Solve a bridge between two marginals and export slices");
    solve->add_option("--case", sa.case_name, "Reference case (gaussian, stable_node, harmonic, centrifugal, moving_node)");
    solve->add_option("--rho0", sa.rho0_file, "Initial marginal CSV (x,value)")->check(CLI::ExistingFile);
    solve->add_option("--rhoT", sa.rhoT_file, "Final marginal CSV (x,value)")->check(CLI::ExistingFile);
    solve->add_option("--potential", sa.potential, "free, harmonic, gaussian, nodal, centrifugal, moving_node");
    solve->add_option("--gamma", sa.gamma, "Centrifugal strength");
    solve->add_option("--alpha", sa.alpha, "Moving-node time shift");
    auto* sxmin = solve->add_option("--x-min", sa.x_min, "Grid start (cases: whole-line components only)");
    auto* sxmax = solve->add_option("--x-max", sa.x_max, "Grid end (cases: whole-line components only)");
    solve->add_option("--nx", sa.nx, "Nodes per domain component");
    auto* st0 = solve->add_option("--t0", sa.t0, "Start time (cases: window start unless set)");
    auto* sT = solve->add_option("--T", sa.T, "End time (cases: window end unless set)");
    solve->add_option("--slices", sa.slices, "Stored time slices including both ends");
    solve->add_option("--tol", sa.tol, "Marginal L1 residual tolerance");
    solve->add_option("--max-iter", sa.max_iter, "Iteration cap");
    solve->add_option("--method", sa.method, "Kernel method: pde or analytic");
    solve->add_flag("--no-pad", sa.no_pad, "Assemble on the grid itself (Dirichlet wall at its ends)");
    solve->add_option("--component", sa.component, "all, left or right (split domains)");
    solve->add_option("--out", sa.out, "Output directory");

    KernelArgs ka;
    auto* kernel = app.add_subcommand("kernel", "Assemble or estimate a Feynman-Kac kernel");
    kernel->add_option("--potential", ka.potential, "free, harmonic, gaussian, nodal, centrifugal, moving_node");
    kernel->add_option("--gamma", ka.gamma, "Centrifugal strength");
    kernel->add_option("--alpha", ka.alpha, "Moving-node time shift");
    kernel->add_option("--method", ka.method, "pde, analytic or mc");
    kernel->add_option("--s", ka.s, "Start time");
    kernel->add_option("--tau", ka.tau, "Duration t - s");
    kernel->add_option("--nx", ka.nx, "Grid nodes");
    kernel->add_option("--x-min", ka.x_min, "Grid start");
    kernel->add_option("--x-max", ka.x_max, "Grid end");
    kernel->add_option("--steps", ka.steps, "Crank-Nicolson steps (0 = automatic)");
    kernel->add_option("--paths", ka.paths, "Monte Carlo paths");
    kernel->add_option("--substeps", ka.substeps, "Monte Carlo time points per path");
    auto* kseed = kernel->add_option("--seed", ka.seed, "Monte Carlo seed (required for mc)");
    kernel->add_option("--y", ka.y, "Monte Carlo start point");
    kernel->add_option("--x", ka.x, "Monte Carlo end point");
    kernel->add_option("--scheme", ka.scheme, "Monte Carlo scheme: pinned or forward");
    kernel->add_flag("--restrict", ka.restrict_domain, "Kill Monte Carlo paths leaving [x-min, x-max]");
    kernel->add_option("--out", ka.out, "Output directory");

    SimulateArgs si;
    auto* simulate = app.add_subcommand("simulate", "Simulate the bridge diffusion");
    simulate->add_option("--from-run", si.from_run, "Directory written by solve (component directory for split domains)")
        ->check(CLI::ExistingDirectory);
    simulate->add_option("--case", si.case_name, "Use the case's closed-form drift instead");
    simulate->add_option("--gamma", si.gamma, "Centrifugal strength");
    simulate->add_option("--alpha", si.alpha, "Moving-node time shift");
    simulate->add_option("--paths", si.paths, "Number of paths");
    simulate->add_option("--dt", si.dt, "Euler-Maruyama step");
    simulate->add_option("--seed", si.seed, "Random seed")->required();
    simulate->add_option("--record", si.record, "Recorded slices (0 = stored slices, or 11 for cases)");
    simulate->add_option("--nx", si.nx, "Density grid nodes for --case");
    simulate->add_option("--out", si.out, "Output directory");

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate", "Run the diagnostic battery of a reference case");
    validate->add_option("--case", va.case_name, "Case name")->required();
    validate->add_option("--gamma", va.gamma, "Centrifugal strength");
    validate->add_option("--alpha", va.alpha, "Moving-node time shift");
    validate->add_option("--out", va.out, "Directory for report.json (optional)");

    MomentsArgs ma;
    auto* moments = app.add_subcommand("moments", "Estimate short-time drift and diffusion");
    moments->add_option("--case", ma.case_name, "Case with closed-form g and b");
    moments->add_option("--gamma", ma.gamma, "Centrifugal strength");
    moments->add_option("--alpha", ma.alpha, "Moving-node time shift");
    moments->add_option("--x0", ma.x0, "Start point");
    moments->add_option("--s", ma.s, "Start time");
    moments->add_option("--eps", ma.eps, "Truncation radius");
    moments->add_option("--taus", ma.taus, "Increments t - s")->delimiter(',');
    moments->add_option("--method", ma.method, "pde (transition densities) or paths (simulation)");
    moments->add_option("--nx", ma.nx, "Grid nodes per component");
    moments->add_option("--paths", ma.paths, "Paths for --method paths");
    moments->add_option("--dt", ma.dt, "Step for --method paths");
    moments->add_option("--record", ma.record, "Record slices for --method paths");
    moments->add_option("--seed", ma.seed, "Seed for --method paths");
    moments->add_option("--out", ma.out, "Output directory");

    const std::size_t saved_workers = worker_count();
    int code = kOk;
    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int rc = app.exit(e, out, err);
            return rc == 0 ? kOk : kUsageError;
        }
        apply_workers(workers);
        if (solve->parsed() && !sa.case_name.empty()) {
            // echo the case-dependent defaults as resolved values
            const auto c = case_from_name(sa.case_name, sa.gamma, sa.alpha);
            auto pin = [](CLI::Option* opt, double& var, double value) {
                std::ostringstream v;
                v << std::setprecision(17) << value;
                opt->clear();
                opt->add_result(v.str());
                var = value;
            };
            if (st0->count() == 0) pin(st0, sa.t0, c.window.t0());
            if (sT->count() == 0) pin(sT, sa.T, c.window.t1());
            if (c.domain_components.size() == 1 && sxmin->count() + sxmax->count() == 0) {
                pin(sxmin, sa.x_min, c.domain_components.front().first);
                pin(sxmax, sa.x_max, c.domain_components.front().second);
            }
        }
        std::string active;
        for (const auto* sub : app.get_subcommands()) active = sub->get_name();
        const std::string echo = echo_config(app.config_to_str(true, false), active);
        if (solve->parsed()) {
            sa.t0_given = st0->count() > 0;
            sa.T_given = sT->count() > 0;
            sa.range_given = sxmin->count() + sxmax->count() > 0;
            code = cmd_solve(sa, echo, out);
        }
        else if (kernel->parsed()) {
            ka.seed_given = kseed->count() > 0;
            code = cmd_kernel(ka, echo, out);
        } else if (simulate->parsed()) code = cmd_simulate(si, echo, out);
        else if (validate->parsed()) code = cmd_validate(va, echo, out);
        else if (moments->parsed()) code = cmd_moments(ma, echo, out);
    } catch (const SingularPotentialError& e) {
        err << "error: " << e.what()
            << "\nhint: use domain splitting (solve --case centrifugal solves each half-line separately) or --method mc\n";
        code = kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        code = kUsageError;
    }
    set_worker_count(saved_workers);
    return code;
}

}  // namespace fkbridge::cli
