#include "fkbridge/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fkbridge {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Laplacian(sqrt rho)/sqrt rho for rho ~ (1+t^2)^(-5/2) exp(-x^2/(2(1+t^2))) w,
// w = x^4/4 - x^2 t^2 + t^2 (1+t^2). Written through ln w so the expression
// stays finite wherever w > 0.
double moving_node_potential(double x, double t) {
    const double a = 1.0 + t * t;
    const double w = 0.25 * x * x * x * x - x * x * t * t + t * t * a;
    if (w <= 0.0) return kInf;
    const double dw = x * x * x - 2.0 * t * t * x;
    const double d2w = 3.0 * x * x - 2.0 * t * t;
    const double q = dw / w;
    return x * x / (4.0 * a * a) - 0.5 * x * q / a - 0.5 / a + 0.5 * d2w / w - 0.25 * q * q;
}

double tabulated_value(const std::vector<Profile>& table, double x, double t) {
    if (table.size() == 1) return table.front().interpolate(x);
    if (t < table.front().time || t > table.back().time)
        throw std::out_of_range("tabulated potential: t outside the tabulated window");
    auto hi = std::upper_bound(table.begin(), table.end(), t,
                               [](double v, const Profile& p) { return v < p.time; });
    if (hi == table.end()) return table.back().interpolate(x);
    auto lo = std::prev(hi);
    const double u = (t - lo->time) / (hi->time - lo->time);
    return (1.0 - u) * lo->interpolate(x) + u * hi->interpolate(x);
}

}  // namespace

double centrifugal_ground_energy(double gamma) {
    if (!(gamma > -0.125)) throw std::invalid_argument("centrifugal: gamma must exceed -1/8");
    return 2.0 + std::sqrt(1.0 + 8.0 * gamma);
}

PotentialSpec PotentialSpec::free() { return PotentialSpec(); }

PotentialSpec PotentialSpec::harmonic() {
    PotentialSpec s;
    s.kind_ = PotentialKind::Harmonic;
    s.energy_ = 1.0;
    s.lower_bound_ = -1.0;
    return s;
}

PotentialSpec PotentialSpec::gaussian_case() {
    PotentialSpec s;
    s.kind_ = PotentialKind::GaussianCase;
    s.lower_bound_ = -1.0;
    return s;
}

PotentialSpec PotentialSpec::nodal_case() {
    PotentialSpec s;
    s.kind_ = PotentialKind::NodalCase;
    s.lower_bound_ = -3.0;
    return s;
}

PotentialSpec PotentialSpec::centrifugal(double gamma) {
    return centrifugal(gamma, centrifugal_ground_energy(gamma));
}

PotentialSpec PotentialSpec::centrifugal(double gamma, double energy) {
    // gamma in (-1/8, 0) makes c unbounded below near the origin
    if (!(gamma >= 0.0)) throw std::invalid_argument("centrifugal potential: gamma must be >= 0");
    if (!std::isfinite(energy)) throw std::invalid_argument("centrifugal: energy must be finite");
    PotentialSpec s;
    s.kind_ = PotentialKind::Centrifugal;
    s.gamma_ = gamma;
    s.energy_ = energy;
    if (gamma != 0.0) s.singular_ = {0.0};
    // min over x of x^2 + 2 gamma / x^2 is 2 sqrt(2 gamma), attained at x^2 = sqrt(2 gamma)
    s.lower_bound_ = gamma > 0.0 ? 2.0 * std::sqrt(2.0 * gamma) - energy : -energy;
    return s;
}

PotentialSpec PotentialSpec::moving_node(double alpha) {
    if (!std::isfinite(alpha)) throw std::invalid_argument("moving_node: alpha must be finite");
    PotentialSpec s;
    s.kind_ = PotentialKind::MovingNode;
    s.alpha_ = alpha;
    s.energy_ = 2.5;
    s.singular_ = {0.0};
    s.singular_time_ = alpha;
    // infimum -3/2 is approached at x = 0 as t -> alpha
    s.lower_bound_ = -1.5;
    return s;
}

PotentialSpec PotentialSpec::tabulated(std::vector<Profile> slices) {
    if (slices.empty()) throw std::invalid_argument("tabulated potential: no slices");
    double lb = kInf;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        if (!(slices[k].grid == slices.front().grid))
            throw std::invalid_argument("tabulated potential: slices must share a grid");
        if (k > 0 && !(slices[k].time > slices[k - 1].time))
            throw std::invalid_argument("tabulated potential: slice times must increase");
        for (double v : slices[k].values) lb = std::min(lb, v);
    }
    PotentialSpec s;
    s.kind_ = PotentialKind::Tabulated;
    s.lower_bound_ = lb;
    if (slices.size() > 1) {
        s.window_begin_ = slices.front().time;
        s.window_end_ = slices.back().time;
    }
    s.table_ = std::make_shared<const std::vector<Profile>>(std::move(slices));
    return s;
}

std::string PotentialSpec::name() const {
    switch (kind_) {
        case PotentialKind::Free: return "free";
        case PotentialKind::Harmonic: return "harmonic";
        case PotentialKind::GaussianCase: return "gaussian";
        case PotentialKind::NodalCase: return "nodal";
        case PotentialKind::Centrifugal: return "centrifugal";
        case PotentialKind::MovingNode: return "moving_node";
        case PotentialKind::Tabulated: return "tabulated";
    }
    return "unknown";
}

bool PotentialSpec::time_dependent() const noexcept {
    switch (kind_) {
        case PotentialKind::GaussianCase:
        case PotentialKind::NodalCase:
        case PotentialKind::MovingNode: return true;
        case PotentialKind::Tabulated: return table_->size() > 1;
        default: return false;
    }
}

double PotentialSpec::operator()(double x, double t) const {
    switch (kind_) {
        case PotentialKind::Free: return 0.0;
        case PotentialKind::Harmonic: return x * x - 1.0;
        case PotentialKind::GaussianCase: {
            const double a = 1.0 + t * t;
            return x * x / (2.0 * a * a) - 1.0 / a;
        }
        case PotentialKind::NodalCase: {
            const double a = 1.0 + t * t;
            return x * x / (2.0 * a * a) - 3.0 / a;
        }
        case PotentialKind::Centrifugal:
            if (gamma_ == 0.0) return x * x - energy_;
            if (x == 0.0) return kInf;
            return x * x + 2.0 * gamma_ / (x * x) - energy_;
        case PotentialKind::MovingNode: return moving_node_potential(x, t - alpha_);
        case PotentialKind::Tabulated: return tabulated_value(*table_, x, t);
    }
    return 0.0;
}

double evaluate_potential(const PotentialSpec& spec, double x, double t) { return spec(x, t); }

std::vector<double> gradient(const Grid& grid, std::span<const double> v) {
    const std::size_t n = grid.size();
    if (v.size() != n) throw std::invalid_argument("gradient: value count does not match grid");
    const double h = grid.spacing();
    std::vector<double> d(n);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    return d;
}

std::vector<double> laplacian(const Grid& grid, std::span<const double> v) {
    const std::size_t n = grid.size();
    if (v.size() != n) throw std::invalid_argument("laplacian: value count does not match grid");
    if (n < 4) throw std::invalid_argument("laplacian: need at least 4 nodes");
    const double h2 = grid.spacing() * grid.spacing();
    std::vector<double> d(n);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
    d[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2;
    d[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2;
    return d;
}

Profile quantum_potential_from_density(const Profile& rho) {
    std::vector<double> amp(rho.size());
    for (std::size_t i = 0; i < rho.size(); ++i) {
        if (!(rho[i] > 0.0))
            throw std::invalid_argument(
                "quantum_potential_from_density: density must be strictly positive; "
                "split the domain at nodes");
        amp[i] = std::sqrt(rho[i]);
    }
    auto lap = laplacian(rho.grid, amp);
    for (std::size_t i = 0; i < lap.size(); ++i) lap[i] /= amp[i];
    return Profile(rho.grid, std::move(lap), rho.time);
}

Profile potential_from_drift(const Profile& drift, const std::optional<Profile>& dt_log_g) {
    if (dt_log_g && !(dt_log_g->grid == drift.grid))
        throw std::invalid_argument("potential_from_drift: grids differ");
    const auto db = gradient(drift.grid, drift.values);
    std::vector<double> c(drift.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] = 0.5 * (0.5 * drift[i] * drift[i] + db[i]);
        if (dt_log_g) c[i] += (*dt_log_g)[i];
    }
    return Profile(drift.grid, std::move(c), drift.time);
}

}  // namespace fkbridge
