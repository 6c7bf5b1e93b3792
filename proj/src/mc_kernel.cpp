#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fkbridge/errors.hpp"
#include "fkbridge/kernel.hpp"
#include "fkbridge/parallel.hpp"
#include "fkbridge/rng.hpp"

namespace fkbridge {

namespace {

// ln(1e300): a Riemann sum beyond this is treated as divergent.
constexpr double kExclusion = 690.7755278982137;

bool inside(const std::optional<std::pair<double, double>>& dom, double x) {
    return !dom || (x >= dom->first && x <= dom->second);
}

}  // namespace

McEstimate mc_kernel_estimate(const PotentialSpec& spec, double y, double x, double s, double t,
                              const McOptions& opt) {
    if (!(t > s)) throw std::invalid_argument("mc_kernel_estimate: need s < t");
    if (opt.n_time < 8) throw std::invalid_argument("mc_kernel_estimate: n_time must be >= 8");
    if (opt.n_paths < 2) throw std::invalid_argument("mc_kernel_estimate: n_paths must be >= 2");
    if (opt.domain && !(opt.domain->first < opt.domain->second))
        throw std::invalid_argument("mc_kernel_estimate: empty domain");
    if (!inside(opt.domain, y) || !inside(opt.domain, x))
        throw std::invalid_argument("mc_kernel_estimate: endpoint outside the domain");
    const double c_y = spec(y, s), c_x = spec(x, t);
    if (!std::isfinite(c_y) || !std::isfinite(c_x)) {
        std::ostringstream msg;
        msg << "mc_kernel_estimate: endpoint lies in the singular set of '" << spec.name() << "'";
        throw SingularPotentialError(msg.str());
    }

    // Barriers checked between samples: domain ends and static singular points.
    std::vector<double> barriers;
    if (opt.domain) barriers = {opt.domain->first, opt.domain->second};
    if (spec.has_static_singularities())
        for (double p : spec.singular_set()) barriers.push_back(p);

    const std::size_t n = opt.n_time;
    const double dt = (t - s) / static_cast<double>(n);
    const bool pinned = opt.scheme == McScheme::PinnedBridge;

    std::vector<double> weight(opt.n_paths);
    std::vector<unsigned char> excluded(opt.n_paths, 0);

    parallel_for(opt.n_paths, [&](std::size_t p0, std::size_t p1) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t p = p0; p < p1; ++p) {
            auto rng = path_stream(opt.seed, p);
            normal.reset();
            double prev = y, c_prev = c_y, sum = 0.0, survive = 1.0, tail = 1.0;
            bool dead = false;
            for (std::size_t k = 0; k < n && !dead; ++k) {
                const double tau_next = k + 1 == n ? t : s + static_cast<double>(k + 1) * dt;
                double next;
                if (k + 1 == n) {
                    next = x;
                    if (!pinned) tail = heat_kernel(prev, x, dt);
                } else if (pinned) {
                    const double rem = t - (s + static_cast<double>(k) * dt);
                    const double mean = prev + (x - prev) * dt / rem;
                    const double var = 2.0 * dt * (rem - dt) / rem;
                    next = mean + std::sqrt(var) * normal(rng);
                } else {
                    next = prev + std::sqrt(2.0 * dt) * normal(rng);
                }
                if (!inside(opt.domain, next)) {
                    dead = true;
                    break;
                }
                for (double b : barriers) {
                    const double ab = (prev - b) * (next - b);
                    if (ab <= 0.0) {
                        dead = true;
                        break;
                    }
                    // Brownian bridge (variance 2 per unit time) touching b between samples
                    survive *= -std::expm1(-ab / dt);
                }
                if (dead) break;
                const double c_next = k + 1 == n ? c_x : spec(next, tau_next);
                if (!std::isfinite(c_next)) {
                    dead = true;
                    break;
                }
                sum += 0.5 * dt * (c_prev + c_next);
                if (sum > kExclusion) {
                    dead = true;
                    break;
                }
                prev = next;
                c_prev = c_next;
            }
            weight[p] = dead ? 0.0 : std::exp(-sum) * survive * tail;
            excluded[p] = (dead || weight[p] == 0.0) ? 1 : 0;
        }
    });

    const double np = static_cast<double>(opt.n_paths);
    const double mean_w = pairwise_sum(weight.data(), weight.size()) / np;
    std::vector<double> dev(opt.n_paths);
    for (std::size_t p = 0; p < dev.size(); ++p) dev[p] = (weight[p] - mean_w) * (weight[p] - mean_w);
    const double var = pairwise_sum(dev.data(), dev.size()) / (np - 1.0);
    const double scale = pinned ? heat_kernel(y, x, t - s) : 1.0;

    McEstimate est;
    est.mean = scale * mean_w;
    est.std_error = scale * std::sqrt(var / np);
    est.n_paths = opt.n_paths;
    est.n_excluded = static_cast<std::size_t>(std::count(excluded.begin(), excluded.end(), 1));
    return est;
}

McEstimate mc_kernel_estimate(const PotentialSpec& spec, double y, double x, double s, double t,
                              std::size_t n_paths, std::size_t n_time, std::uint64_t seed,
                              std::optional<std::pair<double, double>> domain) {
    McOptions opt;
    opt.n_paths = n_paths;
    opt.n_time = n_time;
    opt.seed = seed;
    opt.domain = domain;
    return mc_kernel_estimate(spec, y, x, s, t, opt);
}

}  // namespace fkbridge
