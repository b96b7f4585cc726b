#pragma once

#include "cma/simulate.hpp"

#include <string>
#include <vector>

namespace cma::cli {

/// One published row: mean (and SD across replications where printed) of
/// each column. Missing entries are NaN.
struct ReferenceRow {
    NullPattern pattern = NullPattern::none;
    double true_delta = 0.5;
    std::string method;  // label as printed: "CMA-delta", "BK", "CMA-h", ...
    std::vector<double> mean;
    std::vector<double> sd;
};

struct ReferenceTable {
    std::vector<std::string> columns;  // quantity names as used by the Monte Carlo driver
    std::vector<ReferenceRow> rows;

    /// nullptr when the table has no such row.
    const ReferenceRow* find(NullPattern pattern, double true_delta, const std::string& method) const;
};

/// Single-level study, 1000 replications, n = 100.
const ReferenceTable& reference_table1();
/// Multilevel study with the true delta supplied, 200 replications.
const ReferenceTable& reference_table2();
/// Multilevel study with delta estimated, 200 replications.
const ReferenceTable& reference_table3();

}  // namespace cma::cli
