#include "tbseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tbseg/error.hpp"

namespace tbseg {

namespace {

double evaluate(const ScalarObjective& objective, std::span<const double> at, std::size_t coordinate) {
    const double v = objective(at);
    if (!std::isfinite(v)) {
        throw NumericError("finite_diff_check: objective is not finite at coordinate " + std::to_string(coordinate));
    }
    return v;
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarObjective& objective, const GradientFn& gradient,
                                  std::span<const double> theta, const FiniteDiffOptions& options) {
    if (!(options.step > 0.0)) throw DomainError("finite_diff_check: step must be > 0");

    GradCheckResult r;
    r.analytic = gradient(theta);
    if (r.analytic.size() != theta.size()) {
        throw DomainError("finite_diff_check: gradient has " + std::to_string(r.analytic.size()) +
                          " entries for " + std::to_string(theta.size()) + " parameters");
    }
    r.numeric.resize(theta.size());

    std::vector<double> probe(theta.begin(), theta.end());
    const std::uint64_t home = options.region ? options.region(theta) : 0;
    double centre = 0.0;
    bool have_centre = false;

    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        double h = options.step;
        double numeric = 0.0;
        for (int attempt = 0;; ++attempt) {
            probe[i] = saved + h;
            const double up = evaluate(objective, probe, i);
            const bool up_home = !options.region || options.region(probe) == home;
            probe[i] = saved - h;
            const double down = evaluate(objective, probe, i);
            const bool down_home = !options.region || options.region(probe) == home;
            probe[i] = saved;

            numeric = (up - down) / (2.0 * h);
            if (up_home && down_home) break;
            if (attempt < options.max_refinements) {
                h /= 10.0;
                if (attempt == 0) ++r.refined;
                continue;
            }
            if (up_home != down_home) {
                if (!have_centre) {
                    centre = evaluate(objective, theta, i);
                    have_centre = true;
                }
                numeric = up_home ? (up - centre) / h : (centre - down) / h;
            }
            break;
        }
        r.numeric[i] = numeric;

        const double a = r.analytic[i];
        const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        if (err > r.max_relative_error) {
            r.max_relative_error = err;
            r.worst_index = i;
        }
    }
    return r;
}

}  // namespace tbseg
