#include "reference.hpp"

#include <cmath>
#include <limits>

namespace cma::cli {

namespace {

constexpr double NA = std::numeric_limits<double>::quiet_NaN();
using P = NullPattern;

}  // namespace

const ReferenceRow* ReferenceTable::find(NullPattern pattern, double true_delta, const std::string& method) const {
    for (const auto& r : rows) {
        if (r.pattern == pattern && r.true_delta == true_delta && r.method == method) return &r;
    }
    return nullptr;
}

const ReferenceTable& reference_table1() {
    static const ReferenceTable t{
        {"A", "C", "B", "C_total", "AB_p", "AB_d"},
        {
            {P::none, 0.5, "CMA-delta", {-5.002, 4.003, -9.999, 54.016, 50.012, 50.012}, {0.200, 0.556, 0.104, 1.901, 2.085, 2.085}},
            {P::none, 0.5, "BK", {-5.002, 6.505, -9.499, 54.016, 47.511, 47.511}, {0.200, 0.479, 0.089, 1.901, 1.971, 1.971}},
            {P::a_zero, 0.5, "CMA-delta", {0.001, 4.004, -10.001, 3.994, -0.010, -0.010}, {0.196, 0.197, 0.103, 1.872, 1.962, 1.962}},
            {P::a_zero, 0.5, "BK", {0.001, 4.004, -9.500, 3.994, -0.010, -0.010}, {0.196, 0.171, 0.091, 1.872, 1.864, 1.864}},
            {P::b_zero, 0.5, "CMA-delta", {-5.014, 3.978, -0.001, 3.986, 0.007, 0.007}, {0.198, 0.542, 0.100, 0.201, 0.497, 0.497}},
            {P::b_zero, 0.5, "BK", {-5.014, 6.485, 0.498, 3.986, -2.499, -2.499}, {0.198, 0.466, 0.084, 0.201, 0.435, 0.435}},
            {P::ab_zero, 0.5, "CMA-delta", {-0.002, 4.000, -0.003, 4.001, 0.001, 0.001}, {0.202, 0.200, 0.104, 0.198, 0.021, 0.021}},
            {P::ab_zero, 0.5, "BK", {-0.002, 4.001, 0.498, 4.001, -0.0001, -0.0001}, {0.202, 0.174, 0.091, 0.198, 0.100, 0.100}},
            {P::none, 0.0, "CMA-delta", {-5.007, 3.981, -10.004, 54.065, 50.083, 50.083}, {0.198, 0.549, 0.100, 1.992, 2.028, 2.028}},
            {P::none, 0.0, "BK", {-5.007, 3.981, -10.004, 54.065, 50.083, 50.083}, {0.198, 0.549, 0.100, 1.992, 2.028, 2.028}},
        }};
    return t;
}

// Variance columns carry no SD in print.
const ReferenceTable& reference_table2() {
    static const ReferenceTable t{
        {"A", "C", "B", "C_total", "AB_p", "AB_d", "sigma_a2", "sigma_c2", "sigma_b2", "lambda2"},
        {
            {P::none, 0.5, "CMA-h", {-5.006, 4.002, -9.999, 54.045, 50.056, 50.042, 0.384, 0.330, 0.387, 0.366}, {0.103, 0.111, 0.101, 1.109, 1.098, 1.107, NA, NA, NA, NA}},
            {P::none, 0.5, "CMA-ts", {-5.006, 3.991, -10.002, 54.045, 50.066, 50.054, 0.487, 0.553, 0.482, 0.603}, {0.103, 0.112, 0.101, 1.109, 1.097, 1.107, NA, NA, NA, NA}},
            // 57.551 is as printed; it disagrees with the neighbouring AB_p column.
            {P::none, 0.5, "KKB", {-5.006, 6.493, -9.502, 54.045, 47.549, 57.551, 0.483, 0.682, 0.477, 0.621}, {0.103, 0.119, 0.102, 1.109, 1.061, 1.062, NA, NA, NA, NA}},
            {P::none, 0.5, "CMA-delta", {-5.006, -3.380, -11.471, 54.049, 57.429, 57.429, NA, NA, NA, NA}, {0.104, 1.153, 0.247, 1.115, 1.864, 1.864, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "CMA-h", {-0.006, 3.989, -10.001, 4.035, 0.059, 0.046, 0.354, 0.351, 0.351, 0.406}, {0.103, 0.107, 0.101, 1.046, 1.031, 1.047, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "CMA-ts", {-0.006, 3.989, -10.002, 4.035, 0.059, 0.046, 0.509, 0.508, 0.503, 0.519}, {0.103, 0.107, 0.101, 1.046, 1.031, 1.047, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "KKB", {-0.006, 3.992, -9.502, 4.035, 0.041, 0.044, 0.499, 0.646, 0.493, 0.556}, {0.103, 0.116, 0.102, 1.046, 0.995, 0.996, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "CMA-delta", {-0.006, 3.975, -10.450, 4.038, 0.063, 0.063, NA, NA, NA, NA}, {0.104, 0.153, 0.124, 1.053, 1.084, 1.084, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "CMA-h", {-5.006, 4.002, 0.0005, 3.985, -0.004, -0.017, 0.384, 0.330, 0.387, 0.366}, {0.103, 0.111, 0.101, 0.519, 0.506, 0.504, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "CMA-ts", {-5.006, 3.991, -0.002, 3.985, 0.006, -0.006, 0.487, 0.553, 0.482, 0.603}, {0.103, 0.112, 0.101, 0.519, 0.506, 0.505, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "KKB", {-5.006, 6.493, 0.498, 3.985, -2.511, -2.508, 0.483, 0.692, 0.477, 0.621}, {0.103, 0.119, 0.102, 0.519, 0.512, 0.512, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "CMA-delta", {-5.006, -3.380, -1.471, 3.987, 7.367, 7.367, NA, NA, NA, NA}, {0.104, 1.153, 0.247, 0.520, 1.274, 1.274, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "CMA-h", {-0.006, 3.989, -0.001, 3.975, -0.001, -0.013, 0.354, 0.351, 0.351, 0.406}, {0.103, 0.107, 0.101, 0.148, 0.010, 0.108, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "CMA-ts", {-0.006, 3.989, -0.002, 3.975, -0.001, -0.013, 0.509, 0.508, 0.503, 0.518}, {0.103, 0.107, 0.101, 0.148, 0.010, 0.108, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "KKB", {-0.006, 3.992, 0.498, 3.975, -0.018, -0.016, 0.499, 0.646, 0.493, 0.556}, {0.103, 0.116, 0.101, 0.148, 0.108, 0.114, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "CMA-delta", {-0.006, 3.975, -0.450, 3.976, 0.002, 0.002, NA, NA, NA, NA}, {0.011, 0.152, 0.124, 0.149, 0.050, 0.050, NA, NA, NA, NA}},
            {P::none, 0.0, "CMA-h", {-5.006, 3.990, -10.002, 54.044, 50.066, 50.053, 0.349, 0.323, 0.349, 0.371}, {0.103, 0.111, 0.101, 1.108, 1.097, 1.106, NA, NA, NA, NA}},
            {P::none, 0.0, "CMA-ts", {-5.005, 3.990, -10.002, 54.044, 50.066, 50.053, 0.487, 0.554, 0.482, 0.603}, {0.103, 0.112, 0.101, 1.108, 1.096, 1.105, NA, NA, NA, NA}},
            {P::none, 0.0, "KKB", {-5.006, 3.990, -10.002, 54.044, 50.051, 50.053, 0.487, 0.554, 0.482, 0.603}, {0.103, 0.112, 0.101, 1.108, 1.104, 1.105, NA, NA, NA, NA}},
            {P::none, 0.0, "CMA-delta", {-5.006, 4.113, -9.975, 54.048, 49.935, 49.935, NA, NA, NA, NA}, {0.103, 0.809, 0.197, 1.113, 1.453, 1.453, NA, NA, NA, NA}},
        }};
    return t;
}

const ReferenceTable& reference_table3() {
    static const ReferenceTable t{
        {"delta", "A", "C", "B", "C_total", "AB_p", "AB_d", "sigma_a2", "sigma_c2", "sigma_b2", "lambda2"},
        {
            {P::none, 0.5, "CMA-ml", {0.334, -5.000, 4.938, -9.817, 54.004, 49.078, 49.066, 0.503, 0.578, 0.494, 0.589}, {0.082, 0.103, 0.429, 0.130, 1.118, 1.143, 1.152, NA, NA, NA, NA}},
            {P::none, 0.5, "CMA-h", {0.366, -5.000, 4.757, -9.853, 54.004, 49.257, 49.247, 0.400, 0.341, 0.402, 0.355}, {0.098, 0.103, 0.568, 0.160, 1.118, 1.187, 1.195, NA, NA, NA, NA}},
            {P::none, 0.5, "CMA-h-ts", {0.366, -5.000, 4.753, -9.854, 54.004, 49.263, 49.251, 0.502, 0.564, 0.493, 0.595}, {0.098, 0.103, 0.574, 0.161, 1.118, 1.189, 1.197, NA, NA, NA, NA}},
            {P::none, 0.5, "KKB", {NA, -5.000, 6.489, -9.506, 54.004, 47.513, 47.515, 0.496, 0.692, 0.486, 0.618}, {NA, 0.103, 0.121, 0.105, 1.118, 1.065, 1.066, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "CMA-ml", {0.463, -0.006, 3.989, -9.959, 4.035, 0.059, 0.046, 0.509, 0.513, 0.504, 0.517}, {0.064, 0.103, 0.107, 0.129, 1.046, 1.026, 1.042, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "CMA-h", {0.495, -0.006, 3.989, -9.998, 4.035, 0.059, 0.046, 0.354, 0.348, 0.352, 0.405}, {0.056, 0.103, 0.107, 0.126, 1.046, 1.030, 1.047, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "CMA-h-ts", {0.495, -0.006, 3.989, -9.998, 4.035, 0.059, 0.046, 0.509, 0.504, 0.503, 0.518}, {0.056, 0.103, 0.107, 0.126, 1.046, 1.030, 1.047, NA, NA, NA, NA}},
            {P::a_zero, 0.5, "KKB", {NA, -0.006, 3.992, -9.502, 4.035, 0.041, 0.044, 0.499, 0.646, 0.493, 0.556}, {NA, 0.103, 0.116, 0.102, 1.046, 0.995, 0.996, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "CMA-ml", {0.334, -5.000, 4.938, 0.183, 4.007, -0.918, -0.931, 0.503, 0.578, 0.494, 0.589}, {0.082, 0.103, 0.429, 0.130, 0.539, 0.654, 0.652, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "CMA-h", {0.366, -5.000, 4.755, 0.147, 4.007, -0.737, -0.748, 0.400, 0.341, 0.402, 0.355}, {0.098, 0.103, 0.569, 0.160, 0.539, 0.803, 0.798, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "CMA-h-ts", {0.366, -5.000, 4.751, 0.146, 4.007, -0.732, -0.744, 0.502, 0.564, 0.493, 0.595}, {0.098, 0.103, 0.576, 0.161, 0.539, 0.806, 0.803, NA, NA, NA, NA}},
            {P::b_zero, 0.5, "KKB", {NA, -5.000, 6.489, 0.494, 4.008, -2.483, -2.482, 0.496, 0.692, 0.486, 0.618}, {NA, 0.103, 0.121, 0.105, 0.539, 0.531, 0.531, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "CMA-ml", {0.463, -0.006, 3.989, 0.041, 3.975, -0.001, -0.013, 0.509, 0.513, 0.504, 0.517}, {0.064, 0.103, 0.107, 0.129, 0.148, 0.013, 0.108, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "CMA-h", {0.495, -0.006, 3.989, 0.002, 3.975, -0.001, -0.013, 0.354, 0.347, 0.352, 0.405}, {0.056, 0.103, 0.107, 0.126, 0.148, 0.012, 0.109, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "CMA-h-ts", {0.495, -0.006, 3.989, 0.002, 3.975, -0.001, -0.013, 0.509, 0.504, 0.503, 0.518}, {0.056, 0.103, 0.107, 0.126, 0.148, 0.012, 0.109, NA, NA, NA, NA}},
            {P::ab_zero, 0.5, "KKB", {NA, -0.006, 3.992, 0.498, 3.975, -0.018, -0.016, 0.499, 0.646, 0.493, 0.556}, {NA, 0.103, 0.116, 0.101, 0.148, 0.108, 0.114, NA, NA, NA, NA}},
            {P::none, 0.0, "CMA-ml", {0.005, -4.994, 3.972, -10.010, 53.948, 49.987, 49.977, 0.486, 0.557, 0.489, 0.598}, {0.079, 0.114, 0.409, 0.135, 1.186, 1.260, 1.252, NA, NA, NA, NA}},
            {P::none, 0.0, "CMA-h", {-0.018, -4.994, 4.085, -9.987, 53.948, 49.873, 49.863, 0.401, 0.298, 0.412, 0.333}, {0.151, 0.114, 0.801, 0.186, 1.186, 1.415, 1.415, NA, NA, NA, NA}},
            {P::none, 0.0, "CMA-h-ts", {-0.018, -4.994, 4.086, -9.987, 53.948, 49.872, 49.862, 0.485, 0.550, 0.487, 0.604}, {0.151, 0.114, 0.809, 0.187, 1.186, 1.418, 1.421, NA, NA, NA, NA}},
            {P::none, 0.0, "KKB", {NA, -4.994, 3.995, -10.005, 53.948, 49.951, 49.954, 0.486, 0.553, 0.488, 0.599}, {NA, 0.114, 0.111, 0.110, 1.186, 1.184, 1.185, NA, NA, NA, NA}},
        }};
    return t;
}

}  // namespace cma::cli
