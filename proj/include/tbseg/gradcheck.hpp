#ifndef TBSEG_GRADCHECK_HPP
#define TBSEG_GRADCHECK_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace tbseg {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;  // coordinate with the largest error
    std::vector<double> analytic;
    std::vector<double> numeric;
    std::size_t refined = 0;  // coordinates re-probed with a smaller step
};

using ScalarObjective = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;
/// Identifies the smooth piece of a piecewise-smooth objective containing theta.
using RegionFn = std::function<std::uint64_t(std::span<const double>)>;

struct FiniteDiffOptions {
    double step = 1e-3;
    /// When set, a coordinate whose probes leave theta's piece is re-probed
    /// with the step divided by 10, at most max_refinements times. If the
    /// central probes still straddle a switch, the one-sided difference from
    /// a side that stays on theta's piece is used.
    RegionFn region;
    int max_refinements = 6;
};

/// Compares `gradient(theta)` against central differences
/// (f(theta + h e_i) - f(theta - h e_i)) / 2h coordinate by coordinate. Per
/// coordinate the error is |a - n| / max(1e-8, |a| + |n|); the maximum is
/// returned. Throws NumericError when the objective is non-finite and
/// DomainError when step <= 0 or the gradient has the wrong length.
GradCheckResult finite_diff_check(const ScalarObjective& objective, const GradientFn& gradient,
                                  std::span<const double> theta, const FiniteDiffOptions& options);

inline GradCheckResult finite_diff_check(const ScalarObjective& objective, const GradientFn& gradient,
                                         std::span<const double> theta, double step = 1e-3) {
    FiniteDiffOptions options;
    options.step = step;
    return finite_diff_check(objective, gradient, theta, options);
}

}  // namespace tbseg

#endif  // TBSEG_GRADCHECK_HPP
