#include "fkbridge/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fkbridge {

Grid::Grid(double x_min, double x_max, std::size_t n)
    : x_min_(x_min), x_max_(x_max), n_(n), h_(0.0) {
    if (!std::isfinite(x_min) || !std::isfinite(x_max))
        throw std::invalid_argument("Grid: bounds must be finite");
    if (!(x_min < x_max))
        throw std::invalid_argument("Grid: x_min must be < x_max");
    if (n < 3)
        throw std::invalid_argument("Grid: need at least 3 nodes");
    h_ = (x_max - x_min) / static_cast<double>(n - 1);
    weights_.assign(n, h_);
    weights_.front() = weights_.back() = 0.5 * h_;
}

std::vector<double> Grid::nodes() const {
    std::vector<double> x(n_);
    for (std::size_t i = 0; i < n_; ++i) x[i] = node(i);
    return x;
}

std::size_t Grid::cell_of(double x) const noexcept {
    if (!(x > x_min_)) return 0;
    const double u = (x - x_min_) / h_;
    const auto i = static_cast<std::size_t>(u);
    return std::min(i, n_ - 2);
}

Grid make_uniform_grid(double x_min, double x_max, long long n) {
    if (n < 3) throw std::invalid_argument("make_uniform_grid: need at least 3 nodes");
    return Grid(x_min, x_max, static_cast<std::size_t>(n));
}

TimeGrid::TimeGrid(double t0, double t1, std::size_t m) : t0_(t0), t1_(t1), m_(m) {
    if (!std::isfinite(t0) || !std::isfinite(t1) || !(t1 > t0))
        throw std::invalid_argument("TimeGrid: need finite t0 < t1");
    if (m < 2) throw std::invalid_argument("TimeGrid: need at least 2 slices");
}

std::vector<double> TimeGrid::times() const {
    std::vector<double> t(m_);
    for (std::size_t k = 0; k < m_; ++k) t[k] = time(k);
    return t;
}

std::size_t TimeGrid::index_of(double t) const noexcept {
    const double u = (t - t0_) / step();
    const double k = std::round(u);
    if (k < 0 || k > static_cast<double>(m_ - 1)) return npos;
    const auto idx = static_cast<std::size_t>(k);
    const double tol = 8.0 * std::numeric_limits<double>::epsilon() *
                       std::max({1.0, std::abs(t0_), std::abs(t1_)});
    return std::abs(time(idx) - t) <= tol ? idx : npos;
}

Profile::Profile(Grid g, std::vector<double> v, double t)
    : grid(std::move(g)), values(std::move(v)), time(t) {
    if (values.size() != grid.size())
        throw std::invalid_argument("Profile: value count does not match grid");
    for (double x : values)
        if (!std::isfinite(x)) throw std::invalid_argument("Profile: non-finite value");
}

double Profile::interpolate(double x) const noexcept {
    if (x <= grid.x_min()) return values.front();
    if (x >= grid.x_max()) return values.back();
    const std::size_t i = grid.cell_of(x);
    const double u = (x - grid.node(i)) / grid.spacing();
    return values[i] + u * (values[i + 1] - values[i]);
}

double integrate(const Grid& grid, std::span<const double> values) {
    if (values.size() != grid.size())
        throw std::invalid_argument("integrate: value count does not match grid");
    const auto w = grid.weights();
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += w[i] * values[i];
    return s;
}

double integrate(const Profile& p) { return integrate(p.grid, p.values); }

Profile normalize(const Profile& p) {
    for (double v : p.values)
        if (v < 0.0) throw std::invalid_argument("normalize: negative entry");
    const double mass = integrate(p);
    if (!(mass > 0.0)) throw std::invalid_argument("normalize: non-positive mass");
    std::vector<double> out(p.values);
    for (double& v : out) v /= mass;
    return Profile(p.grid, std::move(out), p.time);
}

double l1_distance(const Profile& p, const Profile& q) {
    if (!(p.grid == q.grid)) throw std::invalid_argument("l1_distance: grids differ");
    const auto w = p.grid.weights();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * std::abs(p[i] - q[i]);
    return s;
}

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_profile_csv(std::ostream& out, const Profile& p) {
    out << "# time=" << fmt17(p.time) << '\n' << "x,value\n";
    for (std::size_t i = 0; i < p.size(); ++i)
        out << fmt17(p.grid.node(i)) << ',' << fmt17(p[i]) << '\n';
}

void write_profile_csv(const std::string& path, const Profile& p) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_profile_csv(out, p);
}

Profile read_profile_csv(std::istream& in) {
    double time = 0.0;
    std::vector<double> xs, vs;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto pos = line.find("time=");
            if (pos != std::string::npos) time = std::stod(line.substr(pos + 5));
            continue;
        }
        if (!header_seen) {
            if (line.rfind("x,", 0) != 0)
                throw std::runtime_error("profile CSV: expected `x,value` header");
            header_seen = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("profile CSV: malformed row");
        xs.push_back(std::stod(line.substr(0, comma)));
        vs.push_back(std::stod(line.substr(comma + 1)));
    }
    if (xs.size() < 3) throw std::runtime_error("profile CSV: fewer than 3 rows");
    Grid grid(xs.front(), xs.back(), xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (std::abs(xs[i] - grid.node(i)) > 1e-9 * std::max(1.0, grid.spacing()))
            throw std::runtime_error("profile CSV: nodes are not uniform");
    return Profile(std::move(grid), std::move(vs), time);
}

Profile read_profile_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_profile_csv(in);
}

}  // namespace fkbridge
