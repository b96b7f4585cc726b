#include "cma/optimize.hpp"

#include "cma/core.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace cma {

ScalarMaximum grid_then_brent(const std::function<double(double)>& objective,
                              const GridSearchOptions& opt) {
    const int npts = std::max(opt.grid_points, 1);
    const double step = npts > 1 ? (opt.upper - opt.lower) / (npts - 1) : 0.0;
    std::vector<double> xs(static_cast<std::size_t>(npts));
    std::vector<double> fs(xs.size());
    ScalarMaximum best;
    best.value = -std::numeric_limits<double>::infinity();
    int best_i = -1;
    double lo_f = std::numeric_limits<double>::infinity();
    double hi_f = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < npts; ++i) {
        const double x = npts > 1 ? opt.lower + step * i : 0.5 * (opt.lower + opt.upper);
        xs[i] = x;
        fs[i] = objective(x);
        ++best.evaluations;
        if (!std::isfinite(fs[i])) continue;
        lo_f = std::min(lo_f, fs[i]);
        hi_f = std::max(hi_f, fs[i]);
        if (fs[i] > best.value) {
            best.value = fs[i];
            best_i = i;
        }
    }
    if (best_i < 0) {
        throw Error(ErrorKind::OptimFailed, "objective is non-finite at every grid point");
    }
    best.x = xs[best_i];
    if (npts == 1) return best;

    const double mid_scale = 1.0 + std::abs(0.5 * (hi_f + lo_f));
    if (hi_f - lo_f <= opt.flat_tol * mid_scale) {
        best.flat = true;
        best.x = 0.5 * (opt.lower + opt.upper);
        best.value = objective(best.x);
        ++best.evaluations;
        return best;
    }

    const double a = xs[std::max(best_i - 1, 0)];
    const double b = xs[std::min(best_i + 1, npts - 1)];
    auto neg = [&](double x) {
        const double f = objective(x);
        return std::isfinite(f) ? -f : std::numeric_limits<double>::infinity();
    };
    // Brent stops once the bracket is within a few multiples of 2^(1-bits)
    // (relative to |x|); four extra bits keep the final error below x_tol.
    const int bits = std::clamp(static_cast<int>(std::ceil(-std::log2(opt.x_tol))) + 4, 8, 52);
    std::uintmax_t iters = 200;
    const auto [x, fneg] = boost::math::tools::brent_find_minima(neg, a, b, bits, iters);
    best.evaluations += static_cast<int>(iters);
    if (-fneg > best.value) {
        best.x = x;
        best.value = -fneg;
    }
    return best;
}

}  // namespace cma
