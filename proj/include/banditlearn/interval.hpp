#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include <boost/math/distributions/normal.hpp>

#include "banditlearn/error.hpp"

namespace banditlearn {

struct Interval {
    double low;
    double high;
};

/// Two-sided standard-normal critical value, e.g. 1.959964 for level 0.95.
inline double normal_critical_value(double level) {
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

/// Wilson score interval for a proportion observed over `n` trials. `n` may be
/// fractional, e.g. an effective sample size under clustering.
inline Interval wilson_interval(double proportion, double n, double level = 0.95) {
    if (!(n > 0.0)) throw ValidationError("confidence interval needs a positive sample size");
    if (!(proportion >= 0.0 && proportion <= 1.0)) throw ValidationError("proportion must lie in [0,1]");
    const double z = normal_critical_value(level);
    const double p = proportion;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double centre = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    Interval ci{centre - half, centre + half};
    // Exact endpoints at the boundaries; the formula gives them up to rounding.
    if (p == 0.0) ci.low = 0.0;
    if (p == 1.0) ci.high = 1.0;
    ci.low = std::clamp(ci.low, 0.0, p);
    ci.high = std::clamp(ci.high, p, 1.0);
    return ci;
}

/// Wilson score interval for a binomial proportion.
inline Interval confidence_interval(std::uint64_t clicks, std::uint64_t impressions, double level = 0.95) {
    if (impressions == 0) throw ValidationError("confidence interval needs at least one impression");
    if (clicks > impressions) throw ValidationError("clicks exceed impressions");
    const double n = static_cast<double>(impressions);
    return wilson_interval(static_cast<double>(clicks) / n, n, level);
}

}  // namespace banditlearn
