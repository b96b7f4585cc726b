#pragma once

#include <functional>

namespace cma {

struct ScalarMaximum {
    double x = 0.0;
    double value = 0.0;
    bool flat = false;      // every grid value equal to within flat_tol
    int evaluations = 0;
};

struct GridSearchOptions {
    double lower = -1.0;
    double upper = 1.0;
    int grid_points = 21;
    double x_tol = 1e-4;     // absolute tolerance of the refinement
    double flat_tol = 1e-9;  // relative spread below which the objective counts as flat
};

/// Scans an equally spaced grid, then refines with Brent's method inside
/// the two cells around the best grid point. Non-finite grid values are
/// skipped; throws OptimFailed when none is finite. A flat objective
/// returns the grid midpoint.
ScalarMaximum grid_then_brent(const std::function<double(double)>& objective,
                              const GridSearchOptions& opt);

}  // namespace cma
