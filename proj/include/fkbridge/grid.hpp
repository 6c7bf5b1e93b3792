#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fkbridge {

/// Uniform 1-D grid on [x_min, x_max] with n >= 3 nodes.
///
/// Node i is x_min + i*h; the last node is x_max exactly. Trapezoid weights
/// are cached since every quadrature-weighted kernel action needs them.
class Grid {
public:
    Grid(double x_min, double x_max, std::size_t n);

    double x_min() const noexcept { return x_min_; }
    double x_max() const noexcept { return x_max_; }
    std::size_t size() const noexcept { return n_; }
    double spacing() const noexcept { return h_; }

    double node(std::size_t i) const noexcept {
        return i + 1 == n_ ? x_max_ : x_min_ + static_cast<double>(i) * h_;
    }
    std::vector<double> nodes() const;

    /// Trapezoid weights: h in the interior, h/2 at both ends.
    std::span<const double> weights() const noexcept { return weights_; }
    double weight(std::size_t i) const noexcept { return weights_[i]; }

    /// Index of the cell [node(i), node(i+1)] containing x, clamped to the grid.
    std::size_t cell_of(double x) const noexcept;

    bool operator==(const Grid& other) const noexcept {
        return x_min_ == other.x_min_ && x_max_ == other.x_max_ && n_ == other.n_;
    }

private:
    double x_min_;
    double x_max_;
    std::size_t n_;
    double h_;
    std::vector<double> weights_;
};

Grid make_uniform_grid(double x_min, double x_max, long long n);

/// Uniform time slices t0 = time(0) < ... < time(m-1) = t1, m >= 2.
class TimeGrid {
public:
    TimeGrid(double t0, double t1, std::size_t m);

    double t0() const noexcept { return t0_; }
    double t1() const noexcept { return t1_; }
    std::size_t size() const noexcept { return m_; }
    double step() const noexcept { return (t1_ - t0_) / static_cast<double>(m_ - 1); }
    double time(std::size_t k) const noexcept {
        return k + 1 == m_ ? t1_ : t0_ + static_cast<double>(k) * step();
    }
    std::vector<double> times() const;

    /// Index k with |time(k) - t| within a few rounding units, or npos.
    std::size_t index_of(double t) const noexcept;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    double t0_;
    double t1_;
    std::size_t m_;
};

/// A real field sampled on a grid at one time.
struct Profile {
    Grid grid;
    std::vector<double> values;
    double time = 0.0;

    /// Validates length and finiteness.
    Profile(Grid grid, std::vector<double> values, double time = 0.0);

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const noexcept { return values[i]; }

    /// Piecewise-linear interpolation; constant extrapolation outside the grid.
    double interpolate(double x) const noexcept;
};

/// Samples fn(x) at every node.
template <typename Fn>
Profile sample(const Grid& grid, Fn&& fn, double time = 0.0) {
    std::vector<double> v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) v[i] = fn(grid.node(i));
    return Profile(grid, std::move(v), time);
}

/// Trapezoid rule; exact for affine integrands.
double integrate(const Profile& p);
double integrate(const Grid& grid, std::span<const double> values);

/// Rescales to unit mass. Rejects negative entries or non-positive mass.
Profile normalize(const Profile& p);

/// Trapezoid integral of |p - q|. Both profiles must share a grid.
double l1_distance(const Profile& p, const Profile& q);

/// CSV with a `# time=<t>` comment line and an `x,value` header, 17 digits.
void write_profile_csv(std::ostream& out, const Profile& p);
void write_profile_csv(const std::string& path, const Profile& p);

/// Reads what write_profile_csv wrote. The grid is reconstructed from the
/// first and last x and must be uniform.
Profile read_profile_csv(std::istream& in);
Profile read_profile_csv(const std::string& path);

}  // namespace fkbridge
