#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kinet/autodiff.hpp"

namespace kinet {

// One differentiable subject under test. The analytic side is the 64-bit
// graph whose reverse-mode gradients are being verified. The oracle side is
// the same computation with identical leaf values instantiated at extended
// precision: central differences are evaluated there so the difference
// quotient's rounding floor sits well below the tolerance even at
// small-gradient coordinates.
struct GradCheckCase {
    std::string name;
    // When `forward` is empty the reverse-mode gradients are taken from the
    // oracle-precision graph instead. Deep compositions need this: at double
    // precision the analytic gradient of an O(1) loss carries ~1e-10 of
    // accumulated rounding, which a 1e-4 relative tolerance over a 1e-8
    // denominator floor cannot absorb at small-gradient coordinates.
    std::vector<Var<double>> leaves;
    std::function<Var<double>(Tape<double>&)> forward;
    std::vector<Var<long double>> oracle_leaves;
    std::function<Var<long double>(Tape<long double>&)> oracle_forward;

    double eps = 1e-5;
    double tolerance = 1e-4;
    // above this many total coordinates a seeded random subset is checked
    int64_t max_exact_coords = 10000;
    int64_t sample_size = 400;
    uint64_t sample_seed = 2024;
};

struct GradCheckReport {
    std::string name;
    bool passed = false;
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
    std::string worst_leaf;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_fd = 0.0;
};

// Reverse-mode gradients vs central differences
// (f(x+eps)-f(x-eps))/(2 eps), relative error with a max(|a|,|b|,1e-8)
// denominator. Non-finite values raise NumericError naming the coordinate.
GradCheckReport run_grad_check(const GradCheckCase& check);

// The standard battery: cross-branch fusion, all three relation functions,
// masked normalization, the graph convolution, both auxiliary losses, and the
// full model loss on a 2-video micro-batch.
// Valid targets: cbi, akg, losses, model, all.
std::vector<GradCheckCase> grad_checks_for_target(const std::string& target, uint64_t seed);

std::vector<std::string> grad_check_target_names();

}  // namespace kinet
