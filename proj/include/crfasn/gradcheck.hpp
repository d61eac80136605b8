#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "crfasn/autodiff.hpp"
#include "crfasn/params.hpp"

namespace crfasn {

struct GradCheckEntry {
    std::string name;
    int checked = 0;
    double max_rel_error = 0;
    double max_abs_error = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0;
    bool passed = true;
    std::vector<std::string> failing_params;
    /// Primitive ops on the tape whose own backward rule disagrees with finite
    /// differences. Filled only when the check fails.
    std::vector<std::string> failing_ops;
};

struct GradCheckOptions {
    double eps = 1e-4;
    double tol = 1e-4;
    int max_per_tensor = 50;
    /// Denominator floor of the relative error, so gradients that are zero up
    /// to rounding do not produce spurious failures.
    double floor = 1e-6;
    std::uint64_t seed = 0;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Compares analytic gradients of `loss_fn` with central differences for up
/// to max_per_tensor sampled elements of each parameter. `loss_fn` must be
/// deterministic; two disagreeing evaluations raise std::runtime_error.
GradCheckReport grad_check(const std::function<ad::Tensor()>& loss_fn, ParamRegistry& params,
                           const GradCheckOptions& opts = {});

/// Checks each listed primitive in isolation on a small random probe and
/// returns the names of those that fail.
std::vector<std::string> audit_ops(std::span<const ad::Op> kinds, const GradCheckOptions& opts = {});

}  // namespace crfasn
